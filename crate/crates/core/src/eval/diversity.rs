//! Mean pairwise Euclidean distance over seeded random index pairs; reported
//! alongside the reference set's own value for closer-to-reference-is-better
//! comparisons.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::EvalError;
use crate::model::CoeffVector;

/// Mean Euclidean distance over `pairs` seeded random distinct index pairs.
/// When `pairs` covers all unordered pairs, enumerates them exhaustively.
pub fn diversity(set: &[CoeffVector], pairs: usize, seed: u64) -> Result<f64, EvalError> {
    if set.len() < 2 {
        return Err(EvalError::TooFewSamples {
            needed: 2,
            got: set.len(),
        });
    }
    if pairs == 0 {
        return Ok(0.0);
    }
    let n = set.len();
    let all_pairs = n * (n - 1) / 2;
    if pairs >= all_pairs {
        let mut total = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                total += set[i].distance(&set[j]);
            }
        }
        return Ok(total / all_pairs as f64);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..pairs {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        total += set[i].distance(&set[j]);
    }
    Ok(total / pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_coeffs, CoeffVector, ValidatePolicy};

    #[test]
    fn identical_set_has_zero_diversity() {
        let set = vec![CoeffVector::neutral(); 5];
        assert_eq!(diversity(&set, 10, 42).unwrap(), 0.0);
    }

    #[test]
    fn two_vectors_single_pair_is_their_distance() {
        let a = CoeffVector::neutral();
        let b = validate_coeffs(&[0.5; 61], ValidatePolicy::Strict).unwrap();
        let d = a.distance(&b);
        assert!((diversity(&[a, b], 1, 7).unwrap() - d).abs() < 1e-12);
    }

    #[test]
    fn exhaustive_matches_all_pairs_oracle() {
        let set: Vec<CoeffVector> = (0..10)
            .map(|k| {
                let mut raw = [0.0; 61];
                for (i, v) in raw.iter_mut().enumerate() {
                    *v = ((k * 61 + i) as f64 * 0.37).sin() * 0.8;
                }
                validate_coeffs(&raw, ValidatePolicy::Strict).unwrap()
            })
            .collect();
        // Brute-force all-pairs mean with scalar loops.
        let mut total = 0.0;
        let mut count = 0;
        for i in 0..10 {
            for j in i + 1..10 {
                let mut sq = 0.0;
                for c in 0..61 {
                    let d = set[i].values()[c] - set[j].values()[c];
                    sq += d * d;
                }
                total += sq.sqrt();
                count += 1;
            }
        }
        assert_eq!(count, 45);
        let got = diversity(&set, 45, 42).unwrap();
        assert!((got - total / 45.0).abs() < 1e-12);
    }

    #[test]
    fn seeded_sampling_is_deterministic() {
        let set: Vec<CoeffVector> = (0..20)
            .map(|k| {
                validate_coeffs(&[(k as f64 * 0.045).sin(); 61], ValidatePolicy::Strict).unwrap()
            })
            .collect();
        let a = diversity(&set, 30, 42).unwrap();
        let b = diversity(&set, 30, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_samples_rejected() {
        assert_eq!(
            diversity(&[CoeffVector::neutral()], 5, 42),
            Err(EvalError::TooFewSamples { needed: 2, got: 1 })
        );
    }
}
