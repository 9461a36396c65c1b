//! Central finite-difference checking of tape gradients.

use super::params::ParamSet;
use super::tape::{Tape, Var};
use crate::error::Result;

/// Outcome of comparing autodiff gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Relative error with a small absolute floor so exact zeros compare sanely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Checks every scalar of every parameter (or at most `max_per_param` of each)
/// with step `h`. `build` must record a scalar loss on the given tape.
pub fn check_params<F>(
    params: &mut ParamSet,
    h: f64,
    max_per_param: usize,
    build: F,
) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Var>,
{
    params.zero_grad();
    let mut tape = Tape::new();
    let loss = build(&mut tape, params)?;
    tape.backward(loss, params)?;

    let eval = |p: &ParamSet| -> Result<f64> {
        let mut t = Tape::new();
        let l = build(&mut t, p)?;
        Ok(t.value(l).item())
    };

    let mut report = GradCheck {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let n = params.value(id).len();
        let stride = (n / max_per_param.max(1)).max(1);
        for j in (0..n).step_by(stride).take(max_per_param) {
            let orig = params.value(id).data()[j];
            params.value_mut(id).data_mut()[j] = orig + h;
            let up = eval(params)?;
            params.value_mut(id).data_mut()[j] = orig - h;
            let down = eval(params)?;
            params.value_mut(id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = params.grad(id).data()[j];
            let e = rel_err(analytic, numeric);
            report.checked += 1;
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = Some((params.name(id).to_string(), j, analytic, numeric));
            }
        }
    }
    Ok(report)
}
