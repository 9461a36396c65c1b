//! Trains the truncated diffusion planner with the expert endpoint as its
//! goal, then checks that plans follow the injected goal, including when
//! the goal is moved sideways.
//!
//! Run with `cargo run --release --example planner`.

use goaldiff::diffusion::PlanInput;
use goaldiff::harness::train::{oracle_plan_inputs, prepare_training, train_planner_on};
use goaldiff::harness::{scenario_set, Arm, HarnessConfig};
use goaldiff::scene::{dist, rasterize_bev_at, LayoutKind, Point};
use goaldiff::uncertainty::Guidance;

const B: f64 = 0.3;

fn main() -> goaldiff::Result<()> {
    let mut cfg = HarnessConfig::default();
    cfg.train.kinds = vec![LayoutKind::Straight, LayoutKind::Curve];
    cfg.train.scenarios = 200;
    cfg.train.planner.epochs = 40;
    let data = prepare_training(&cfg, None)?;
    let inputs = oracle_plan_inputs(&cfg, &data, B)?;
    let (planner, curve) = train_planner_on(&cfg, &data, Arm::M3, inputs)?;
    println!(
        "{} anchors, {} denoising steps; final epoch L1 {:.3} CE {:.3}",
        planner.anchors.len(),
        planner.schedule().steps(),
        curve[curve.len() - 1].l1,
        curve[curve.len() - 1].ce
    );

    let held_out = scenario_set(&cfg.train.kinds, 40, 7_000_000, 0.5, &cfg.scenario)?;
    let (mut within, mut err, mut left, mut right) = (0, 0.0, 0, 0);
    for s in &held_out {
        let pose = s.expert_pose(0.0);
        let grid = rasterize_bev_at(s, &pose, 0.0, &cfg.grid)?;
        let plan_to = |mu: Point| -> goaldiff::Result<Point> {
            let g = Guidance::new(mu, [B; 2])?;
            let input = PlanInput::new(&planner.anchors, &grid, s.current().motion(), s.command.one_hot(), Some(&g))?;
            Ok(planner.plan(&input)?.trajectory().endpoint())
        };
        let goal = s.gt.endpoint();
        let end = plan_to(goal)?;
        let e = dist(end, goal);
        err += e;
        within += (e <= 1.0) as usize;
        left += (plan_to([goal[0], goal[1] + 3.0])?[1] > end[1]) as usize;
        right += (plan_to([goal[0], goal[1] - 3.0])?[1] < end[1]) as usize;
    }
    let n = held_out.len();
    println!("endpoint within 1 m of the goal: {within}/{n} (mean error {:.2} m)", err / n as f64);
    println!("goal moved 3 m left: plan follows {left}/{n}; right: {right}/{n}");
    Ok(())
}
