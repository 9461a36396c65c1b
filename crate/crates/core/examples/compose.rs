//! Plugs a custom high-level policy into the two-level contract and rolls it
//! out closed-loop next to the built-in raw-goal policy. The custom policy
//! widens the goal scale with ego speed.
//!
//! Run with `cargo run --release --example compose`.

use goaldiff::contract::{compose, DiffusionPolicy, HighLevelPolicy, Observation, RawGoalPolicy};
use goaldiff::harness::train::{plan_inputs, prepare_training, train_planner_on};
use goaldiff::harness::{rollout, scenario_set, Arm, HarnessConfig, RolloutContext};
use goaldiff::metrics::mean_scores;
use goaldiff::multirate::Mode;
use goaldiff::uncertainty::Guidance;
use goaldiff::{Error, Result};

struct SpeedScaled;

impl HighLevelPolicy for SpeedScaled {
    fn name(&self) -> &str {
        "speed-scaled"
    }

    fn guidance(&self, obs: &Observation<'_>) -> Result<Guidance> {
        let goal = obs.raw_goal.ok_or_else(|| Error::InvalidArgument("no raw goal".into()))?;
        let speed = obs.motion[0].hypot(obs.motion[1]);
        Guidance::new(goal, [0.5 + 0.2 * speed, 0.5 + 0.1 * speed])
    }
}

fn main() -> Result<()> {
    let mut cfg = HarnessConfig::default();
    cfg.train.scenarios = 60;
    cfg.train.frames = 4;
    cfg.train.vocab_size = 128;
    cfg.train.planner.epochs = 8;
    let data = prepare_training(&cfg, None)?;
    let mut inputs = plan_inputs(&cfg, &data, &[(Arm::M1, &[])])?;
    let inputs = inputs.remove(&Arm::M1).expect("requested arm").into_iter().map(|(p, _)| p).collect();
    let (planner, _) = train_planner_on(&cfg, &data, Arm::M1, inputs)?;

    let low = DiffusionPolicy { planner: &planner };
    let raw = RawGoalPolicy {
        b: [cfg.raw_goal_scale; 2],
    };
    let custom = SpeedScaled;
    let ctx = RolloutContext {
        cfg: &cfg,
        vocab: &data.vocab,
        mode: Mode::Gamma0,
        k: 1,
        predictor: None,
    };
    let scenarios = scenario_set(&cfg.suite.kinds, 12, cfg.suite.seed_offset, cfg.suite.difficulty, &cfg.scenario)?;
    let policies: [&dyn HighLevelPolicy; 2] = [&raw, &custom];
    for high in policies {
        let planner = compose(Some(high), &low)?;
        let mut scores = Vec::new();
        for s in &scenarios {
            scores.push(rollout(&ctx, &planner, s)?.mean_scores());
        }
        let m = mean_scores(&scores);
        println!(
            "{:<13} composite {:.3}  nc {:.3}  dac {:.3}  ep {:.3}",
            high.name(),
            m.composite,
            m.nc,
            m.dac,
            m.ep
        );
    }
    Ok(())
}
