//! Per-channel 1-D empirical Wasserstein-1 distance, averaged over the 61
//! channels, on a shared quantile grid.

use super::EvalError;
use crate::model::CoeffVector;

/// Empirical quantile with linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// 1-D W₁ between two sample sets: both quantile functions are evaluated on
/// a common midpoint grid of max(|a|, |b|) points and the absolute
/// differences averaged.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let grid = sa.len().max(sb.len());
    let mut total = 0.0;
    for k in 0..grid {
        let q = (k as f64 + 0.5) / grid as f64;
        total += (quantile(&sa, q) - quantile(&sb, q)).abs();
    }
    Ok(total / grid as f64)
}

/// Mean over the 61 channels of the per-channel 1-D W₁ distance.
pub fn wasserstein_dist(a: &[CoeffVector], b: &[CoeffVector]) -> Result<f64, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let channels = a[0].values().len();
    let mut total = 0.0;
    for c in 0..channels {
        let ca: Vec<f64> = a.iter().map(|v| v.values()[c]).collect();
        let cb: Vec<f64> = b.iter().map(|v| v.values()[c]).collect();
        total += wasserstein_1d(&ca, &cb)?;
    }
    Ok(total / channels as f64)
}
