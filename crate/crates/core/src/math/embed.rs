//! Sinusoidal scalar embedding.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Frequency base for [`sinusoidal_embed`].
pub const EMBED_BASE: f64 = 10_000.0;

/// Embeds a scalar as interleaved `(sin(v/ω_k), cos(v/ω_k))` pairs with
/// `ω_k = 10⁴^(2k/dim)`.
pub fn sinusoidal_embed(value: f64, dim: usize) -> Result<Tensor> {
    Ok(Tensor::row(&sinusoidal_values(value, dim)?))
}

pub(crate) fn sinusoidal_values(value: f64, dim: usize) -> Result<Vec<f64>> {
    if dim < 2 || dim % 2 != 0 {
        return Err(Error::invalid(format!(
            "embedding dim must be even and >= 2, got {dim}"
        )));
    }
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let omega = EMBED_BASE.powf(2.0 * k as f64 / dim as f64);
        let phase = value / omega;
        out.push(phase.sin());
        out.push(phase.cos());
    }
    Ok(out)
}

/// Derivative of each embedding entry with respect to `value`.
pub(crate) fn sinusoidal_derivative(value: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let omega = EMBED_BASE.powf(2.0 * k as f64 / dim as f64);
        let phase = value / omega;
        out.push(phase.cos() / omega);
        out.push(-phase.sin() / omega);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gives_alternating_pattern() {
        for dim in [2, 8, 32] {
            let e = sinusoidal_embed(0.0, dim).unwrap();
            assert_eq!(e.len(), dim);
            for (i, &v) in e.data().iter().enumerate() {
                assert_eq!(v, if i % 2 == 0 { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn odd_dim_rejected() {
        assert!(sinusoidal_embed(1.0, 7).is_err());
        assert!(sinusoidal_embed(1.0, 0).is_err());
    }

    #[test]
    fn distinct_values_are_distinguishable() {
        let a = sinusoidal_embed(0.1, 16).unwrap();
        let b = sinusoidal_embed(10.0, 16).unwrap();
        let dot: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
        let cos = dot / (a.norm() * b.norm());
        assert!(cos < 0.99, "cosine similarity {cos}");
    }

    #[test]
    fn entries_bounded() {
        for v in [-1e3, -3.2, 0.5, 77.0, 1e5] {
            let e = sinusoidal_embed(v, 12).unwrap();
            assert!(e.data().iter().all(|x| (-1.0..=1.0).contains(x)));
        }
    }
}
