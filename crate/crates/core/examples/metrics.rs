//! Frame metrics on expert trajectories and on three hand-built failures:
//! a collision, an off-road drift and a stalled plan.

use goaldiff::metrics::{mean_scores, score_frame, FrameInputs, FrameScores, MetricsConfig, RouteFrame};
use goaldiff::scene::{
    generate_scenario, AgentState, LayoutKind, Polyline, Pose, RoadLayout, Trajectory, EGO_HALF_EXTENT,
};

const SPEED: f64 = 10.0;

fn plan(f: impl Fn(f64) -> [f64; 2]) -> Trajectory {
    let pts = (0..8)
        .map(|i| {
            let t = Trajectory::time(i);
            let p = f(t);
            let q = f(t + 1e-3);
            let heading = if q == p { 0.0 } else { (q[1] - p[1]).atan2(q[0] - p[0]) };
            [p[0], p[1], heading]
        })
        .collect();
    Trajectory::new(pts).expect("eight waypoints")
}

fn show(label: &str, s: &FrameScores) {
    println!(
        "{label:<10} nc {:.0} dac {:.3} ttc {:.0} ep {:.3} comfort {:.0} ec {:.3} -> composite {:.3}",
        s.nc, s.dac, s.ttc, s.ep, s.comfort, s.ec, s.composite
    );
}

fn main() -> goaldiff::Result<()> {
    let cfg = MetricsConfig::default();

    for (i, kind) in LayoutKind::ALL.into_iter().enumerate() {
        let s = generate_scenario(kind, 100 + i as u64, 0.7)?;
        let m = mean_scores(&s.expert_scores(&cfg));
        println!("expert on {:<10} composite {:.3}", kind.as_str(), m.composite);
    }

    let route = Polyline::new(vec![[-50.0, 0.0], [250.0, 0.0]])?;
    let layout = RoadLayout {
        kind: LayoutKind::Straight,
        centerlines: vec![route.clone()],
        half_width: 3.5,
    };
    let frame = RouteFrame::new(&route, Pose::IDENTITY, 0.0);
    let gt = plan(|t| [SPEED * t, 0.0]);
    let none: Vec<AgentState> = Vec::new();
    // Drives alongside inside the ego footprint for the whole horizon.
    let shadow = vec![AgentState {
        center: [1.0, 1.5],
        heading: 0.0,
        velocity: [SPEED, 0.0],
        half_extent: EGO_HALF_EXTENT,
    }];

    let cases: [(&str, Trajectory, &Vec<AgentState>); 4] = [
        ("expert", gt.clone(), &none),
        ("collision", gt.clone(), &shadow),
        ("off-road", plan(|t| [SPEED * t, 1.5 * t]), &none),
        ("stalled", plan(|_| [0.0, 0.0]), &none),
    ];
    for (label, traj, agents) in &cases {
        let s = score_frame(
            &FrameInputs {
                plan: traj,
                gt: &gt,
                previous: None,
                layout: &layout,
                route: &frame,
                agents: *agents,
            },
            &cfg,
        );
        show(label, &s);
    }
    Ok(())
}
