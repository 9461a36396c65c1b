//! Guidance extension between slow-system frames: constant-acceleration
//! extrapolation of a plan endpoint, and the drivability-guided variant that
//! snaps to a vocabulary goal when the estimate leaves the road.

use goaldiff::multirate::{
    derive_kinematics, extrapolate_dac_guided, extrapolate_linear, schedule, Schedule, DEFAULT_TAU,
};
use goaldiff::scene::{Trajectory, DT};
use goaldiff::vocab::GoalVocabulary;

fn main() -> goaldiff::Result<()> {
    let (v0, a) = ([6.0, 0.0], [0.5, 0.8]);
    let pos = |t: f64| [v0[0] * t + 0.5 * a[0] * t * t, v0[1] * t + 0.5 * a[1] * t * t];
    let plan = Trajectory::new((0..8).map(|i| {
        let p = pos(Trajectory::time(i));
        [p[0], p[1], 0.0]
    }).collect())?;
    let state = derive_kinematics(&plan)?;
    println!("endpoint {:?}  v0 {:?}  a {:?}", state.mu_current, state.v0, state.a);

    let candidates = vec![[32.0, 8.0], [36.0, 10.0], [38.0, 14.0], [42.0, 12.0]];
    let vocab = GoalVocabulary::new(candidates)?;
    let dac = [0.9, 0.2, 0.8, 0.9];

    for k in 1..=3 {
        let t = state.t0 + k as f64 * DT;
        let linear = extrapolate_linear(&state, t)?;
        let exact = pos(t);
        let guided = extrapolate_dac_guided(linear, &vocab, &dac, DEFAULT_TAU)?;
        println!(
            "+{:.1} s: linear ({:.3}, {:.3}) exact ({:.3}, {:.3})  guided ({:.2}, {:.2}) snapped {:?}",
            k as f64 * DT,
            linear[0],
            linear[1],
            exact[0],
            exact[1],
            guided.point[0],
            guided.point[1],
            guided.snapped
        );
    }

    let pattern: String = (0..9)
        .map(|f| match schedule(f, 3) {
            Ok(Schedule::RunSlow) => 'S',
            _ => '.',
        })
        .collect();
    println!("slow-system schedule at k=3: {pattern}");
    Ok(())
}
