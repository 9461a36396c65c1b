//! Checks tape gradients of the Laplace NLL against central differences.

use goaldiff::math::gradcheck::check_params;
use goaldiff::math::{ParamSet, Tensor};
use goaldiff::uncertainty::{laplace_nll, laplace_nll_var};

fn main() -> goaldiff::Result<()> {
    let target = [1.5, -0.4];
    let mut params = ParamSet::new();
    let mu = params.add("mu", Tensor::row(&[0.7, 0.3]));
    let b = params.add("b", Tensor::row(&[0.9, 1.7]));

    let report = check_params(&mut params, 1e-6, 8, |tape, p| {
        let m = tape.param(p, mu);
        let s = tape.param(p, b);
        laplace_nll_var(tape, &Tensor::row(&target), m, s)
    })?;
    let value = laplace_nll(target, [0.7, 0.3], [0.9, 1.7])?;
    println!("NLL {value:.6}; {} gradient entries, max relative error {:.2e}", report.checked, report.max_rel_err);
    if let Some((name, j, analytic, numeric)) = report.worst {
        println!("worst: {name}[{j}] analytic {analytic:.8} numeric {numeric:.8}");
    }
    Ok(())
}
