//! Goal injection: BEV features sampled at the goal, gated by a weight
//! computed from the Laplace scale. The gate is trained here to close as the
//! scale grows.

use goaldiff::injection::{project_phi, InjectionConfig, InjectionModel};
use goaldiff::math::{rng, Adam, ParamSet, Tape, Tensor};
use goaldiff::scene::{generate_scenario, rasterize_bev, GridConfig, LayoutKind};

fn main() -> goaldiff::Result<()> {
    let scene = generate_scenario(LayoutKind::Curve, 4, 0.4)?;
    let grid = rasterize_bev(&scene, &GridConfig::default())?;
    let goal = scene.gt.endpoint();
    let phi = project_phi(&grid, goal)?;
    println!("features at goal ({:.1}, {:.1}): {:?}", goal[0], goal[1], phi.features.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());

    let mut params = ParamSet::new();
    let cfg = InjectionConfig {
        scalar_gate: true,
        ..InjectionConfig::default()
    };
    let model = InjectionModel::new(&mut params, "inject", cfg, &mut rng::seeded(0));
    let scales = [0.1, 0.3, 1.0, 3.0, 10.0];
    let before: Vec<f64> = scales.iter().map(|&b| model.confidence_weight(&params, [b, b]).map(|w| w[0])).collect::<goaldiff::Result<_>>()?;

    // Target: trust tight goals, ignore loose ones.
    let mut opt = Adam::new(1e-2);
    for _ in 0..300 {
        params.zero_grad();
        for &b in &scales {
            let mut tape = Tape::new();
            let bv = tape.constant(Tensor::row(&[b, b]));
            let w = model.confidence_weight_var(&mut tape, &params, bv)?;
            let target = tape.constant(Tensor::row(&[1.0 / (1.0 + b)]));
            let d = tape.sub(w, target)?;
            let loss = tape.square(d);
            let loss = tape.sum(loss);
            tape.backward(loss, &mut params)?;
        }
        opt.step(&mut params);
    }
    for (i, &b) in scales.iter().enumerate() {
        let w = model.confidence_weight(&params, [b, b])?[0];
        println!("b = {b:>4}: gate {:.3} -> {w:.3} (target {:.3})", before[i], 1.0 / (1.0 + b));
    }
    Ok(())
}
