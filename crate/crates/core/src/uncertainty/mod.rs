//! Goal uncertainty: the goal point is modelled as an axis-aligned 2D
//! Laplace distribution `{μ, b}` and a refiner network predicts both.

mod refiner;

pub use refiner::{
    train_refiner, NllKind, Refiner, RefinerConfig, RefinerInput, RefinerSample, RefinerTrainConfig,
    B_FLOOR, QUERY_EMBED_DIM,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Adam, ParamSet, Tape, Tensor, Var};
use crate::scene::Point;

/// Refined goal with per-axis Laplace scale (m).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Guidance {
    pub mu: Point,
    pub b: [f64; 2],
}

impl Guidance {
    pub fn new(mu: Point, b: [f64; 2]) -> Result<Self> {
        if !mu.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("guidance mean".into()));
        }
        if !b.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::invalid(format!("guidance scale must be positive, got {b:?}")));
        }
        Ok(Self { mu, b })
    }
}

fn check_scale(b: f64) -> Result<()> {
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::invalid(format!("scale must be positive, got {b}")));
    }
    Ok(())
}

/// Laplace density `exp(-|v - μ| / b) / (2b)`.
pub fn laplace_pdf(v: f64, mu: f64, b: f64) -> Result<f64> {
    check_scale(b)?;
    Ok((-(v - mu).abs() / b).exp() / (2.0 * b))
}

/// `Σ_i log(2 b_i) + |v_i - μ_i| / b_i`.
pub fn laplace_nll(v: Point, mu: Point, b: [f64; 2]) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..2 {
        check_scale(b[i])?;
        total += (2.0 * b[i]).ln() + (v[i] - mu[i]).abs() / b[i];
    }
    Ok(total)
}

/// `Σ_i log(σ_i) + (v_i - μ_i)² / (2 σ_i²)`, with the `log √(2π)` constant dropped.
pub fn gaussian_nll(v: Point, mu: Point, sigma: [f64; 2]) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..2 {
        check_scale(sigma[i])?;
        total += sigma[i].ln() + (v[i] - mu[i]).powi(2) / (2.0 * sigma[i] * sigma[i]);
    }
    Ok(total)
}

/// Tape version of [`laplace_nll`] for `[m, 2]` batches, averaged over rows.
pub fn laplace_nll_var(tape: &mut Tape, target: &Tensor, mu: Var, b: Var) -> Result<Var> {
    let t = tape.constant(target.clone());
    let r = tape.sub(t, mu)?;
    let r = tape.abs(r);
    let ratio = tape.div(r, b)?;
    let two_b = tape.scale(b, 2.0);
    let log = tape.log(two_b);
    let per = tape.add(log, ratio)?;
    let total = tape.sum(per);
    Ok(tape.scale(total, 1.0 / target.rows() as f64))
}

/// Tape version of [`gaussian_nll`] for `[m, 2]` batches, averaged over rows.
pub fn gaussian_nll_var(tape: &mut Tape, target: &Tensor, mu: Var, sigma: Var) -> Result<Var> {
    let t = tape.constant(target.clone());
    let r = tape.sub(t, mu)?;
    let r2 = tape.square(r);
    let s2 = tape.square(sigma);
    let s2 = tape.scale(s2, 2.0);
    let quad = tape.div(r2, s2)?;
    let log = tape.log(sigma);
    let per = tape.add(log, quad)?;
    let total = tape.sum(per);
    Ok(tape.scale(total, 1.0 / target.rows() as f64))
}

/// Closed-form maximum-likelihood Laplace fit: the median (mean of the two
/// middle values for even counts) and the mean absolute deviation from it.
pub fn laplace_mle(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::invalid("laplace_mle needs at least one sample"));
    }
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    let mu = if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    };
    let b = s.iter().map(|x| (x - mu).abs()).sum::<f64>() / n as f64;
    Ok((mu, b))
}

/// Fits `(μ, b)` by minimizing the Laplace NLL numerically with Adam on a
/// log-scale parameterization of `b`, with a decaying step size.
pub fn fit_laplace_direct(samples: &[f64], iterations: usize) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::invalid("fit needs at least one sample"));
    }
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let spread = samples.iter().map(|x| (x - mean).abs()).sum::<f64>() / n as f64;
    let mut params = ParamSet::new();
    let mu_id = params.add("mu", Tensor::scalar(mean));
    let logb_id = params.add("log_b", Tensor::scalar(spread.max(1e-6).ln()));
    let target = Tensor::new(vec![n, 1], samples.to_vec())?;
    let ones = Tensor::full(&[n, 1], 1.0);
    let lr0 = 0.05 * spread.max(1e-3);
    let mut opt = Adam::new(lr0);
    opt.clip_norm = None;
    for it in 0..iterations {
        opt.lr = lr0 * (1e-5f64).powf(it as f64 / iterations as f64);
        params.zero_grad();
        let mut tape = Tape::new();
        let one = tape.constant(ones.clone());
        let mu = tape.param(&params, mu_id);
        let logb = tape.param(&params, logb_id);
        let mu = tape.matmul(one, mu)?;
        let b = tape.exp(logb);
        let b = tape.matmul(one, b)?;
        let loss = laplace_nll_var(&mut tape, &target, mu, b)?;
        if !tape.value(loss).item().is_finite() {
            return Err(Error::Diverged {
                epoch: it,
                loss: tape.value(loss).item(),
            });
        }
        tape.backward(loss, &mut params)?;
        opt.step(&mut params);
    }
    Ok((params.value(mu_id).item(), params.value(logb_id).item().exp()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pdf_values() {
        assert_eq!(laplace_pdf(1.0, 1.0, 1.0).unwrap(), 0.5);
        assert!((laplace_pdf(2.0, 1.0, 1.0).unwrap() - 0.5 / std::f64::consts::E).abs() < 1e-15);
        assert!(laplace_pdf(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn pdf_integrates_to_one() {
        let (mu, b) = (0.7, 1.3);
        let n = 200_000;
        let (lo, hi) = (mu - 20.0 * b, mu + 20.0 * b);
        let h = (hi - lo) / n as f64;
        // composite Simpson
        let mut acc = laplace_pdf(lo, mu, b).unwrap() + laplace_pdf(hi, mu, b).unwrap();
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * laplace_pdf(lo + i as f64 * h, mu, b).unwrap();
        }
        assert!((acc * h / 3.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn nll_values() {
        assert_eq!(laplace_nll([1.0, 2.0], [1.0, 2.0], [0.5, 0.5]).unwrap(), 0.0);
        let v = laplace_nll([0.0, 0.0], [0.0, 0.0], [1.0, 1.0]).unwrap();
        assert!((v - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!(laplace_nll([0.0, 0.0], [0.0, 0.0], [1.0, -1.0]).is_err());
        let g = gaussian_nll([0.0, 0.0], [0.0, 0.0], [2.0, 3.0]).unwrap();
        assert!((g - (2f64.ln() + 3f64.ln())).abs() < 1e-12);
        assert!(gaussian_nll([0.0, 0.0], [0.0, 0.0], [0.0, 1.0]).is_err());
    }

    #[test]
    fn mle_closed_form() {
        let (mu, b) = laplace_mle(&[-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(mu, 0.0);
        assert!((b - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(laplace_mle(&[2.5; 4]).unwrap(), (2.5, 0.0));
        assert_eq!(laplace_mle(&[1.0, 3.0]).unwrap().0, 2.0);
        assert!(laplace_mle(&[]).is_err());
    }

    #[test]
    fn guidance_validates_scale() {
        assert!(Guidance::new([0.0, 0.0], [0.1, 0.2]).is_ok());
        assert!(Guidance::new([0.0, 0.0], [0.0, 0.2]).is_err());
        assert!(Guidance::new([f64::NAN, 0.0], [1.0, 1.0]).is_err());
    }
}
