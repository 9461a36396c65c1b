//! Laplace scale estimation three ways: closed-form MLE, direct NLL
//! minimization, and a refiner trained on residuals around its raw goal.
//!
//! Run with `cargo run --release --example laplace_fit`.

use goaldiff::math::rng;
use goaldiff::scene::{agent_features, generate_scenario, rasterize_bev, GridConfig, LayoutKind, Pose};
use goaldiff::uncertainty::{
    fit_laplace_direct, laplace_mle, train_refiner, Refiner, RefinerConfig, RefinerInput, RefinerSample,
    RefinerTrainConfig,
};
use rand::Rng;
use rand_distr::{Distribution, Exp};

const B_TRUE: f64 = 0.8;

fn laplace(b: f64, r: &mut impl Rng) -> f64 {
    let e = Exp::new(1.0 / b).expect("positive rate").sample(r);
    if r.random::<bool>() { e } else { -e }
}

fn main() -> goaldiff::Result<()> {
    let mut r = rng::seeded(11);
    let samples: Vec<f64> = (0..4000).map(|_| 2.0 + laplace(B_TRUE, &mut r)).collect();
    let (mu_mle, b_mle) = laplace_mle(&samples)?;
    let (mu_fit, b_fit) = fit_laplace_direct(&samples, 3000)?;
    println!("closed form: mu {mu_mle:.5} b {b_mle:.5}");
    println!("direct NLL:  mu {mu_fit:.5} b {b_fit:.5}  (|db| = {:.2e})", (b_fit - b_mle).abs());

    let grid_cfg = GridConfig::default();
    let cfg = RefinerConfig::default();
    let inputs: Vec<RefinerInput> = [LayoutKind::Straight, LayoutKind::Curve, LayoutKind::Fork, LayoutKind::ExitRamp]
        .iter()
        .enumerate()
        .map(|(i, &kind)| {
            let s = generate_scenario(kind, 40 + i as u64, 0.3)?;
            let grid = rasterize_bev(&s, &grid_cfg)?;
            RefinerInput::new(
                &grid,
                grid.pooled(cfg.pool)?,
                agent_features(&s, &Pose::IDENTITY, 0.0),
                [18.0, 0.5 * i as f64],
                s.current().motion(),
                s.command.one_hot(),
            )
        })
        .collect::<goaldiff::Result<_>>()?;

    let draw = |r: &mut rng::Rng, n: usize| -> Vec<RefinerSample> {
        (0..n)
            .map(|i| {
                let input = inputs[i % inputs.len()].clone();
                let target = [input.g_raw[0] + laplace(B_TRUE, r), input.g_raw[1] + laplace(B_TRUE, r)];
                RefinerSample { input, target }
            })
            .collect()
    };
    let train = draw(&mut r, 800);
    let mut refiner = Refiner::new(cfg, 3);
    let curve = train_refiner(
        &mut refiner,
        &train,
        &RefinerTrainConfig {
            epochs: 12,
            ..Default::default()
        },
    )?;
    println!("refiner NLL {:.4} -> {:.4}", curve[0], curve[curve.len() - 1]);

    let held_out = draw(&mut r, 10_000);
    let guidance: Vec<_> = inputs.iter().map(|i| refiner.refine(i)).collect::<goaldiff::Result<_>>()?;
    let mut inside = 0usize;
    let mut total = 0usize;
    for (i, s) in held_out.iter().enumerate() {
        let g = &guidance[i % inputs.len()];
        for axis in 0..2 {
            total += 1;
            if (s.target[axis] - g.mu[axis]).abs() <= g.b[axis] * std::f64::consts::LN_2 {
                inside += 1;
            }
        }
    }
    for (i, g) in guidance.iter().enumerate() {
        println!(
            "scene {i}: mu offset ({:+.3}, {:+.3})  b ({:.3}, {:.3})  vs b* {B_TRUE}",
            g.mu[0] - inputs[i].g_raw[0],
            g.mu[1] - inputs[i].g_raw[1],
            g.b[0],
            g.b[1]
        );
    }
    println!("coverage of |v - mu| <= b ln 2: {:.4} (target 0.5)", inside as f64 / total as f64);
    Ok(())
}
