//! Gaussian fits over coefficient samples and the Fréchet distance between
//! two fitted Gaussians.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::model::CoeffVector;

/// Diagonal regularizer added to every fitted covariance.
pub const COV_REGULARIZER: f64 = 1e-6;

/// Sample mean and covariance of a coefficient set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// Row-major symmetric covariance, dim × dim.
    pub cov: Vec<Vec<f64>>,
    pub count: usize,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, EvalError> {
        if rows.len() < 2 {
            return Err(EvalError::TooFewSamples {
                needed: 2,
                got: rows.len(),
            });
        }
        let n = rows.len();
        let d = rows[0].len();
        let mut mean = vec![0.0; d];
        for row in rows {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let mut cov = vec![vec![0.0; d]; d];
        for row in rows {
            for i in 0..d {
                let di = row[i] - mean[i];
                for j in i..d {
                    cov[i][j] += di * (row[j] - mean[j]);
                }
            }
        }
        let norm = 1.0 / (n as f64 - 1.0);
        for i in 0..d {
            for j in i..d {
                cov[i][j] *= norm;
                if i == j {
                    cov[i][j] += COV_REGULARIZER;
                } else {
                    cov[j][i] = cov[i][j];
                }
            }
        }
        Ok(GaussianStats {
            mean,
            cov,
            count: n,
        })
    }
}

/// Fits mean and (1/(n-1))-normalized covariance with a 1e-6 diagonal
/// regularizer.
pub fn fit_gaussian(samples: &[CoeffVector]) -> Result<GaussianStats, EvalError> {
    let rows: Vec<Vec<f64>> = samples.iter().map(|s| s.values().to_vec()).collect();
    GaussianStats::from_rows(&rows)
}

fn to_matrix(stats: &GaussianStats) -> DMatrix<f64> {
    let d = stats.dim();
    DMatrix::from_fn(d, d, |i, j| stats.cov[i][j])
}

/// Symmetric matrix square root via eigendecomposition, negative eigenvalues
/// clamped to zero.
fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>, EvalError> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut result = DMatrix::zeros(m.nrows(), m.ncols());
    for k in 0..eig.eigenvalues.len() {
        let lambda = eig.eigenvalues[k].max(0.0).sqrt();
        if !lambda.is_finite() {
            return Err(EvalError::EigenFailure);
        }
        let v = eig.eigenvectors.column(k);
        result += lambda * &v * v.transpose();
    }
    Ok(result)
}

/// ‖μ_a−μ_b‖² + Tr(Σ_a + Σ_b − 2(Σ_a^{1/2} Σ_b Σ_a^{1/2})^{1/2}),
/// clamped at 0.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64, EvalError> {
    if a.dim() != b.dim() {
        return Err(EvalError::DimensionMismatch(a.dim(), b.dim()));
    }
    let mu_a = DVector::from_vec(a.mean.clone());
    let mu_b = DVector::from_vec(b.mean.clone());
    let cov_a = to_matrix(a);
    let cov_b = to_matrix(b);

    let mean_term = (&mu_a - &mu_b).norm_squared();
    let sqrt_a = sym_sqrt(&cov_a)?;
    let inner = &sqrt_a * &cov_b * &sqrt_a;
    let inner_sym = (&inner + inner.transpose()) * 0.5;
    let eig = inner_sym.symmetric_eigen();
    let trace_sqrt: f64 = eig
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum();
    if !trace_sqrt.is_finite() {
        return Err(EvalError::EigenFailure);
    }
    let value = mean_term + cov_a.trace() + cov_b.trace() - 2.0 * trace_sqrt;
    Ok(value.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_coeffs, CoeffVector, ValidatePolicy};

    #[test]
    fn fit_two_neutrals_is_regularized_zero() {
        let stats = fit_gaussian(&[CoeffVector::neutral(), CoeffVector::neutral()]).unwrap();
        assert_eq!(stats.count, 2);
        for (i, row) in stats.cov.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let expected = if i == j { COV_REGULARIZER } else { 0.0 };
                assert!((v - expected).abs() < 1e-15);
            }
        }
        assert!(stats.mean.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn fit_zero_one_pair_hand_oracle() {
        let zeros = CoeffVector::neutral();
        let ones = validate_coeffs(&[1.0; 61], ValidatePolicy::Strict).unwrap();
        let stats = fit_gaussian(&[zeros, ones]).unwrap();
        for &m in &stats.mean {
            assert!((m - 0.5).abs() < 1e-15);
        }
        // Per-channel variance with 1/(n-1): ((0-0.5)^2 + (1-0.5)^2)/1 = 0.5.
        for i in 0..61 {
            assert!((stats.cov[i][i] - (0.5 + COV_REGULARIZER)).abs() < 1e-15);
        }
    }

    #[test]
    fn fit_rejects_single_sample() {
        assert!(matches!(
            fit_gaussian(&[CoeffVector::neutral()]),
            Err(EvalError::TooFewSamples { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn frechet_identity_is_zero() {
        let a = GaussianStats {
            mean: vec![0.3; 61],
            cov: (0..61)
                .map(|i| {
                    (0..61)
                        .map(|j| if i == j { 0.7 } else { 0.05 })
                        .collect()
                })
                .collect(),
            count: 10,
        };
        assert!(frechet_distance(&a, &a).unwrap() < 1e-8);
    }

    #[test]
    fn frechet_identity_cov_mean_shift() {
        let eye: Vec<Vec<f64>> = (0..61)
            .map(|i| (0..61).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let a = GaussianStats {
            mean: vec![0.0; 61],
            cov: eye.clone(),
            count: 10,
        };
        let b = GaussianStats {
            mean: vec![0.1; 61],
            cov: eye,
            count: 10,
        };
        // Closed form: ||Δμ||² = 61 · 0.01 = 0.61.
        assert!((frechet_distance(&a, &b).unwrap() - 0.61).abs() < 1e-9);
    }

    #[test]
    fn frechet_one_dimensional_scale_gap() {
        let a = GaussianStats {
            mean: vec![0.0],
            cov: vec![vec![1.0]],
            count: 5,
        };
        let b = GaussianStats {
            mean: vec![0.0],
            cov: vec![vec![4.0]],
            count: 5,
        };
        // 1-D closed form: (σ₁ − σ₂)² = (1 − 2)² = 1.
        assert!((frechet_distance(&a, &b).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn frechet_is_symmetric() {
        let a = GaussianStats {
            mean: vec![0.1, -0.2, 0.3],
            cov: vec![
                vec![1.0, 0.2, 0.1],
                vec![0.2, 0.8, 0.0],
                vec![0.1, 0.0, 1.2],
            ],
            count: 4,
        };
        let b = GaussianStats {
            mean: vec![-0.3, 0.0, 0.4],
            cov: vec![
                vec![0.5, 0.1, 0.0],
                vec![0.1, 1.5, 0.3],
                vec![0.0, 0.3, 0.9],
            ],
            count: 4,
        };
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-8);
    }

    #[test]
    fn frechet_rejects_dimension_mismatch() {
        let a = GaussianStats {
            mean: vec![0.0],
            cov: vec![vec![1.0]],
            count: 2,
        };
        let b = GaussianStats {
            mean: vec![0.0, 0.0],
            cov: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            count: 2,
        };
        assert_eq!(
            frechet_distance(&a, &b),
            Err(EvalError::DimensionMismatch(1, 2))
        );
    }
}
