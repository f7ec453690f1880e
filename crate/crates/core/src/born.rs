//! Born weights `Tr(D A_i)` and sampling from them.

use rand::Rng;

use crate::error::{Error, Result};
use crate::opcore::{tol, ComplexOperator, DensityOperator};

/// Raw `Tr(D A_i)` for each member.
pub fn raw_weights(state: &DensityOperator, ops: &[ComplexOperator]) -> Result<Vec<f64>> {
    ops.iter().map(|a| state.expectation(a)).collect()
}

/// Clamps weights in `[-1e-10, 0)` to zero and renormalizes. Anything more
/// negative, or a total further than `1e-9` from one, is an error.
pub fn normalize(mut weights: Vec<f64>) -> Result<Vec<f64>> {
    let min = weights.iter().copied().fold(f64::INFINITY, f64::min);
    let sum: f64 = weights.iter().sum();
    if min < -tol::ALGEBRA || (sum - 1.0).abs() > tol::RESOLUTION || !sum.is_finite() {
        return Err(Error::WeightNormalization { sum, min });
    }
    for w in &mut weights {
        *w = w.max(0.0);
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(weights)
}

/// Draws an index with probability proportional to `weights` (which must
/// already be normalized).
pub fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding slack above the last partial sum
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::stream_rng;

    #[test]
    fn normalize_clamps_tiny_negatives() {
        let w = normalize(vec![-5e-11, 0.5, 0.5 + 5e-11]).unwrap();
        assert_eq!(w[0], 0.0);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(normalize(vec![-1e-3, 1.001]).is_err());
        assert!(normalize(vec![0.5, 0.4]).is_err());
    }

    #[test]
    fn sampling_respects_zero_weights() {
        let mut rng = stream_rng(1, 0);
        for _ in 0..1000 {
            assert_eq!(sample_index(&[0.0, 1.0, 0.0], &mut rng), 1);
        }
    }
}
