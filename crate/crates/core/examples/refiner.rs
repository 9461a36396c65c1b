//! Trains the Laplace goal refiner on replayed expert frames, then compares
//! raw and refined goals on unseen scenarios. Corrupted raw goals should
//! come back with larger scales.
//!
//! Run with `cargo run --release --example refiner`.

use goaldiff::harness::train::{prepare_training, scorer_goal, train_refiner_on};
use goaldiff::harness::{frame_seed, scenario_set, HarnessConfig};
use goaldiff::math::rng::derive_seed;
use goaldiff::scene::{agent_features, dist, rasterize_bev_at};
use goaldiff::uncertainty::{NllKind, RefinerInput};

fn main() -> goaldiff::Result<()> {
    let mut cfg = HarnessConfig::default();
    cfg.train.scenarios = 80;
    cfg.train.frames = 4;
    cfg.train.refiner.epochs = 6;
    let data = prepare_training(&cfg, None)?;
    let (refiner, curve) = train_refiner_on(&cfg, &data, NllKind::Laplace)?;
    println!(
        "{} replay frames; NLL {:.3} -> {:.3}",
        data.frames.len(),
        curve[0],
        curve[curve.len() - 1]
    );

    let held_out = scenario_set(&cfg.suite.kinds, 60, 5_000_000, 0.6, &cfg.scenario)?;
    // (raw error, refined error, mean b, count) for clean and corrupted goals.
    let mut acc = [[0.0; 4]; 2];
    for s in &held_out {
        let pose = s.expert_pose(0.0);
        let g_end = s.gt.endpoint();
        let episode = derive_seed(cfg.seed ^ 0xE7, s.seed);
        let (g_raw, corrupted) = scorer_goal(&cfg, &data.vocab, s, &pose, g_end, episode, frame_seed(cfg.seed, s.seed, 0))?;
        let grid = rasterize_bev_at(s, &pose, 0.0, &cfg.grid)?;
        let input = RefinerInput::new(
            &grid,
            grid.pooled(cfg.refiner.pool)?,
            agent_features(s, &pose, 0.0),
            g_raw,
            s.current().motion(),
            s.command.one_hot(),
        )?;
        let g = refiner.refine(&input)?;
        let row = &mut acc[corrupted as usize];
        row[0] += dist(g_raw, g_end);
        row[1] += dist(g.mu, g_end);
        row[2] += 0.5 * (g.b[0] + g.b[1]);
        row[3] += 1.0;
    }
    for (label, row) in ["clean", "corrupted"].iter().zip(acc) {
        let n = row[3].max(1.0);
        println!(
            "{label:<9} n={:>2}  raw error {:.2} m  refined error {:.2} m  mean b {:.2} m",
            row[3], row[0] / n, row[1] / n, row[2] / n
        );
    }
    Ok(())
}
