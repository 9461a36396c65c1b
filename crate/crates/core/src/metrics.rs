//! Simplified driving score.
//!
//! Three gates (no collision, full drivable-area compliance, time-to-collision)
//! multiply a weighted sum of ego progress, comfort and extended comfort
//! (frame-to-frame plan consistency). Collisions are not attributed: every
//! overlap counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{AgentSource, OrientedBox, Point, Polyline, Pose, RoadLayout, Trajectory, DT};
use crate::scene::EGO_HALF_EXTENT;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComfortLimits {
    pub max_accel: f64,
    pub max_jerk: f64,
}

impl Default for ComfortLimits {
    fn default() -> Self {
        Self {
            max_accel: 4.0,
            max_jerk: 8.0,
        }
    }
}

/// Weights of the additive terms; they must sum to one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricWeights {
    pub ep: f64,
    pub comfort: f64,
    pub ec: f64,
}

impl Default for MetricWeights {
    fn default() -> Self {
        Self {
            ep: 0.5,
            comfort: 0.25,
            ec: 0.25,
        }
    }
}

impl MetricWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.ep, self.comfort, self.ec];
        if w.iter().any(|x| !(*x >= 0.0)) || ((w.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "metric weights must be non-negative and sum to 1, got {w:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub weights: MetricWeights,
    pub comfort: ComfortLimits,
    /// Look-ahead of the time-to-collision check (s).
    pub ttc_threshold: f64,
    /// Distance scale of the plan-consistency term (m).
    pub ec_scale: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            weights: MetricWeights::default(),
            comfort: ComfortLimits::default(),
            ttc_threshold: 1.0,
            ec_scale: 1.0,
        }
    }
}

/// Per-frame sub-scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameScores {
    pub nc: f64,
    pub dac: f64,
    pub ttc: f64,
    pub ep: f64,
    pub comfort: f64,
    pub ec: f64,
    pub composite: f64,
}

impl FrameScores {
    pub fn from_parts(
        nc: f64,
        dac: f64,
        ttc: f64,
        ep: f64,
        comfort: f64,
        ec: f64,
        weights: &MetricWeights,
    ) -> Self {
        let mut s = FrameScores {
            nc,
            dac,
            ttc,
            ep,
            comfort,
            ec,
            composite: 0.0,
        };
        s.composite = composite(&s, weights);
        s
    }
}

/// Per-frame scores of one rollout plus their mean.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub frames: Vec<FrameScores>,
}

impl MetricsReport {
    pub fn push(&mut self, s: FrameScores) {
        self.frames.push(s);
    }

    pub fn mean(&self) -> FrameScores {
        mean_scores(&self.frames)
    }
}

pub fn mean_scores(rows: &[FrameScores]) -> FrameScores {
    let n = rows.len().max(1) as f64;
    let sum = |f: fn(&FrameScores) -> f64| rows.iter().map(f).sum::<f64>() / n;
    FrameScores {
        nc: sum(|s| s.nc),
        dac: sum(|s| s.dac),
        ttc: sum(|s| s.ttc),
        ep: sum(|s| s.ep),
        comfort: sum(|s| s.comfort),
        ec: sum(|s| s.ec),
        composite: sum(|s| s.composite),
    }
}

fn ego_box(center: Point, heading: f64) -> OrientedBox {
    OrientedBox::new(center, heading, EGO_HALF_EXTENT)
}

/// 0 if the ego footprint at any waypoint overlaps an agent at the same time.
pub fn score_nc<A: AgentSource + ?Sized>(traj: &Trajectory, agents: &A) -> f64 {
    for (i, p) in traj.points().iter().enumerate() {
        let ego = ego_box([p[0], p[1]], p[2]);
        if agents
            .agents_at(Trajectory::time(i))
            .iter()
            .any(|a| ego.intersects(&a.bbox()))
        {
            return 0.0;
        }
    }
    1.0
}

/// Fraction of waypoints inside the drivable region. `pose` places the
/// trajectory's frame in the layout's frame.
pub fn score_dac(traj: &Trajectory, layout: &RoadLayout, pose: &Pose) -> f64 {
    let inside = traj
        .positions()
        .iter()
        .filter(|&&p| layout.contains(pose.to_world(p)))
        .count();
    inside as f64 / traj.len() as f64
}

/// Samples per second of the time-to-collision propagation.
const TTC_RATE: f64 = 10.0;

/// 1 unless, at some waypoint, propagating the ego at that waypoint's
/// velocity and each agent at its own velocity produces an overlap within
/// `threshold` seconds. Agents already overlapping the ego are left to NC.
pub fn score_ttc<A: AgentSource + ?Sized>(traj: &Trajectory, agents: &A, threshold: f64) -> f64 {
    let pts = traj.with_origin();
    let steps = (threshold * TTC_RATE).round() as usize;
    for i in 0..traj.len() {
        let (p, q) = (pts[i], pts[i + 1]);
        let v = [(q[0] - p[0]) / DT, (q[1] - p[1]) / DT];
        let heading = traj.points()[i][2];
        for a in agents.agents_at(Trajectory::time(i)) {
            if ego_box(q, heading).intersects(&a.bbox()) {
                continue;
            }
            for k in 1..=steps {
                let tau = k as f64 / TTC_RATE;
                let ego = ego_box([q[0] + v[0] * tau, q[1] + v[1] * tau], heading);
                if ego.intersects(&a.advanced(tau).bbox()) {
                    return 0.0;
                }
            }
        }
    }
    1.0
}

/// Route centerline with the arc length of the planning origin, used to
/// measure progress.
pub struct RouteFrame<'a> {
    pub route: &'a Polyline,
    /// Places the trajectory frame in the route's frame.
    pub pose: Pose,
    pub s_start: f64,
}

impl RouteFrame<'_> {
    const BEHIND: f64 = 15.0;
    const AHEAD: f64 = 80.0;

    pub fn new(route: &Polyline, pose: Pose, s_hint: f64) -> RouteFrame<'_> {
        let s_start = route
            .project_in_range([pose.x, pose.y], s_hint - Self::AHEAD, s_hint + Self::AHEAD)
            .s;
        RouteFrame {
            route,
            pose,
            s_start,
        }
    }

    /// Signed arc-length progress of a trajectory-frame point.
    pub fn progress(&self, p: Point) -> f64 {
        let w = self.pose.to_world(p);
        self.route
            .project_in_range(w, self.s_start - Self::BEHIND, self.s_start + Self::AHEAD)
            .s
            - self.s_start
    }
}

/// Route progress of `traj` relative to that of `gt`, clamped to `[0, 1]`.
pub fn score_ep(traj: &Trajectory, gt: &Trajectory, route: &RouteFrame<'_>) -> f64 {
    let reference = route.progress(gt.endpoint());
    let achieved = route.progress(traj.endpoint());
    if reference < 1e-6 {
        return if achieved >= reference { 1.0 } else { 0.0 };
    }
    (achieved / reference).clamp(0.0, 1.0)
}

/// 1 iff finite-difference acceleration and jerk magnitudes stay within limits.
pub fn score_comfort(traj: &Trajectory, limits: &ComfortLimits) -> f64 {
    let pts = traj.with_origin();
    let diff = |v: &[Point]| -> Vec<Point> {
        v.windows(2)
            .map(|w| [(w[1][0] - w[0][0]) / DT, (w[1][1] - w[0][1]) / DT])
            .collect()
    };
    let vel = diff(&pts);
    let acc = diff(&vel);
    let jerk = diff(&acc);
    let norm = |p: &Point| p[0].hypot(p[1]);
    let ok = acc.iter().all(|a| norm(a) <= limits.max_accel + 1e-9)
        && jerk.iter().all(|j| norm(j) <= limits.max_jerk + 1e-9);
    if ok {
        1.0
    } else {
        0.0
    }
}

/// Waypoint gaps below this (m) count as zero in EC, which absorbs
/// frame-transform rounding.
pub const EC_RESOLUTION: f64 = 1e-9;

/// `exp(-mean distance / scale)` over time-aligned waypoints of consecutive
/// plans. `previous` must already be expressed in `current`'s frame; its
/// waypoint `i + shift` is aligned with waypoint `i` of `current`.
pub fn score_ec(current: &Trajectory, previous: &Trajectory, shift: usize, scale: f64) -> f64 {
    let pairs: Vec<f64> = (0..current.len())
        .filter(|i| i + shift < previous.len())
        .map(|i| crate::scene::dist(current.xy(i), previous.xy(i + shift)))
        .map(|d| if d < EC_RESOLUTION { 0.0 } else { d })
        .collect();
    if pairs.is_empty() {
        return 1.0;
    }
    (-(pairs.iter().sum::<f64>() / pairs.len() as f64) / scale).exp()
}

/// Product of the gates times the weighted additive terms.
pub fn composite(s: &FrameScores, w: &MetricWeights) -> f64 {
    let dac_pass = if s.dac >= 1.0 { 1.0 } else { 0.0 };
    s.nc * dac_pass * s.ttc * (w.ep * s.ep + w.comfort * s.comfort + w.ec * s.ec)
}

/// Scores a plan made at `pose`/`t0` against everything known about the scene.
pub struct FrameInputs<'a> {
    pub plan: &'a Trajectory,
    pub gt: &'a Trajectory,
    /// Previous frame's plan expressed in the current frame, and its shift.
    pub previous: Option<(&'a Trajectory, usize)>,
    pub layout: &'a RoadLayout,
    pub route: &'a RouteFrame<'a>,
    pub agents: &'a dyn AgentSource,
}

pub fn score_frame(inputs: &FrameInputs<'_>, cfg: &MetricsConfig) -> FrameScores {
    let plan = inputs.plan;
    FrameScores::from_parts(
        score_nc(plan, inputs.agents),
        score_dac(plan, inputs.layout, &inputs.route.pose),
        score_ttc(plan, inputs.agents, cfg.ttc_threshold),
        score_ep(plan, inputs.gt, inputs.route),
        score_comfort(plan, &cfg.comfort),
        inputs
            .previous
            .map(|(p, shift)| score_ec(plan, p, shift, cfg.ec_scale))
            .unwrap_or(1.0),
        &cfg.weights,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::AgentState;

    fn straight(speed: f64) -> Trajectory {
        Trajectory::new(
            (1..=8)
                .map(|i| [speed * i as f64 * DT, 0.0, 0.0])
                .collect(),
        )
        .unwrap()
    }

    fn agent(center: Point, velocity: Point) -> AgentState {
        AgentState {
            center,
            heading: 0.0,
            velocity,
            half_extent: EGO_HALF_EXTENT,
        }
    }

    #[test]
    fn nc_cases() {
        let t = straight(5.0);
        let none: Vec<AgentState> = vec![];
        assert_eq!(score_nc(&t, &none), 1.0);
        let on_wp3 = vec![agent(t.xy(3), [0.0, 0.0])];
        assert_eq!(score_nc(&t, &on_wp3), 0.0);
        let lateral = vec![agent([10.0, 10.0], [0.0, 0.0])];
        assert_eq!(score_nc(&t, &lateral), 1.0);
    }

    #[test]
    fn ttc_cases() {
        let t = straight(5.0);
        let none: Vec<AgentState> = vec![];
        assert_eq!(score_ttc(&t, &none, 1.0), 1.0);
        // gap 5 m to the first waypoint's footprint, closing at 10 m/s
        let ahead = t.xy(0)[0] + 2.0 * EGO_HALF_EXTENT[0] + 5.0;
        let head_on = vec![agent([ahead, 0.0], [-5.0, 0.0]).advanced(-DT)];
        assert_eq!(score_ttc(&t, &head_on, 1.0), 0.0);
        let parallel = vec![agent([0.0, 3.0], [5.0, 0.0])];
        assert_eq!(score_ttc(&t, &parallel, 1.0), 1.0);
    }

    #[test]
    fn comfort_and_ec() {
        let t = straight(6.0);
        assert_eq!(score_comfort(&t, &ComfortLimits::default()), 1.0);
        assert_eq!(score_ec(&t, &t, 0, 1.0), 1.0);
        let shifted = Trajectory::new(t.points().iter().map(|p| [p[0], p[1] + 1.0, p[2]]).collect())
            .unwrap();
        assert!((score_ec(&t, &shifted, 0, 1.0) - (-1.0f64).exp()).abs() < 1e-12);
        let jerky = Trajectory::new(vec![[3.0, 0.0, 0.0], [3.0, 0.0, 0.0], [9.0, 0.0, 0.0]]).unwrap();
        assert_eq!(score_comfort(&jerky, &ComfortLimits::default()), 0.0);
    }

    #[test]
    fn composite_arithmetic() {
        let w = MetricWeights::default();
        let s = FrameScores::from_parts(1.0, 1.0, 1.0, 1.0, 0.5, 0.0, &w);
        assert!((s.composite - 0.625).abs() < 1e-12);
        assert_eq!(FrameScores::from_parts(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, &w).composite, 1.0);
        assert_eq!(FrameScores::from_parts(0.0, 1.0, 1.0, 1.0, 1.0, 1.0, &w).composite, 0.0);
        assert_eq!(FrameScores::from_parts(1.0, 0.875, 1.0, 1.0, 1.0, 1.0, &w).composite, 0.0);
        assert!(MetricWeights { ep: 0.5, comfort: 0.5, ec: 0.5 }.validate().is_err());
    }

    #[test]
    fn ep_ratio() {
        let route = Polyline::new(vec![[-10.0, 0.0], [100.0, 0.0]]).unwrap();
        let frame = RouteFrame::new(&route, Pose::IDENTITY, 10.0);
        let gt = straight(6.0);
        assert_eq!(score_ep(&gt, &gt, &frame), 1.0);
        let half = straight(3.0);
        assert!((score_ep(&half, &gt, &frame) - 0.5).abs() < 1e-6);
        let stopped = Trajectory::new(vec![[0.0, 0.0, 0.0]; 8]).unwrap();
        assert_eq!(score_ep(&stopped, &gt, &frame), 0.0);
    }

    #[test]
    fn dac_fraction() {
        let layout = RoadLayout {
            kind: crate::scene::LayoutKind::Straight,
            centerlines: vec![Polyline::new(vec![[-100.0, 0.0], [100.0, 0.0]]).unwrap()],
            half_width: 4.0,
        };
        let pts = (0..8)
            .map(|i| [i as f64, if i < 4 { 0.0 } else { 10.0 }, 0.0])
            .collect();
        let t = Trajectory::new(pts).unwrap();
        assert_eq!(score_dac(&t, &layout, &Pose::IDENTITY), 0.5);
    }
}
