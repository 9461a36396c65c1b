//! Closed-loop rollout of a composed planner under the multi-rate schedule.

use std::time::Instant;

use super::train::scorer_goal;
use super::{frame_seed, HarnessConfig};
use crate::contract::{ComposedPlanner, Observation};
use crate::diffusion::Plan;
use crate::error::{Error, Result};
use crate::metrics::{mean_scores, score_frame, FrameInputs, FrameScores, RouteFrame};
use crate::multirate::{extend, ExtensionContext, FreshGuidance, GuidanceCache, Mode, Predictor, Schedule};
use crate::scene::{agent_features, rasterize_bev_at, EgoState, Point, Pose, Scenario, Trajectory, DT, HISTORY_LEN};
use crate::scorer;
use crate::uncertainty::Guidance;
use crate::vocab::GoalVocabulary;

/// Everything a rollout needs besides the planner and the scenario.
#[derive(Clone, Copy)]
pub struct RolloutContext<'a> {
    pub cfg: &'a HarnessConfig,
    pub vocab: &'a GoalVocabulary,
    pub mode: Mode,
    pub k: usize,
    pub predictor: Option<&'a Predictor>,
}

/// Wall-clock milliseconds per module on one frame.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Latency {
    pub raster_ms: f64,
    /// Scorer plus refiner on fresh frames, extension on skipped ones.
    pub slow_ms: f64,
    pub plan_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub frame: usize,
    /// World pose the plan was made from.
    pub pose: Pose,
    /// `true` when the slow system ran on this frame.
    pub fresh: bool,
    pub guidance: Option<Guidance>,
    pub raw_goal: Option<Point>,
    pub corrupted: bool,
    pub plan: Plan,
    pub scores: FrameScores,
    pub latency: Latency,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutRecord {
    pub scenario_seed: u64,
    pub frames: Vec<FrameRecord>,
}

impl RolloutRecord {
    pub fn mean_scores(&self) -> FrameScores {
        let rows: Vec<FrameScores> = self.frames.iter().map(|f| f.scores).collect();
        mean_scores(&rows)
    }

    pub fn fresh_count(&self) -> usize {
        self.frames.iter().filter(|f| f.fresh).count()
    }

    pub fn extended_count(&self) -> usize {
        self.frames.iter().filter(|f| !f.fresh && f.guidance.is_some()).count()
    }

    /// Rows of `frame,fresh,nc,dac,ttc,ep,comfort,ec,composite`.
    pub fn write_csv_rows(&self, id: &str, out: &mut String) {
        use std::fmt::Write as _;
        for f in &self.frames {
            let s = &f.scores;
            writeln!(
                out,
                "{id},{},{},{},{},{},{},{},{},{}",
                f.frame, f.fresh as u8, s.nc, s.dac, s.ttc, s.ep, s.comfort, s.ec, s.composite
            )
            .expect("write to string");
        }
    }
}

pub const ROLLOUT_CSV_HEADER: &str = "rollout,frame,fresh,nc,dac,ttc,ep,comfort,ec,composite";

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Runs `planner` in closed loop on every frame of `scenario`. The ego
/// executes the first waypoint of each selected plan.
pub fn rollout(ctx: &RolloutContext<'_>, planner: &ComposedPlanner<'_>, scenario: &Scenario) -> Result<RolloutRecord> {
    let cfg = ctx.cfg;
    let k = if ctx.mode == Mode::Gamma0 { 1 } else { ctx.k };
    let mut cache = GuidanceCache::new(k)?;
    let mut samples: Vec<Pose> = (0..HISTORY_LEN + 3)
        .map(|i| scenario.expert_pose(-((HISTORY_LEN + 2 - i) as f64) * DT))
        .collect();
    let mut previous: Option<(Trajectory, Pose)> = None;
    let mut frames = Vec::with_capacity(scenario.frames);
    let episode = crate::math::rng::derive_seed(cfg.seed, scenario.seed);

    for f in 0..scenario.frames {
        let t = f as f64 * DT;
        let ego = *EgoState::from_samples(&samples[samples.len() - 3..])
            .last()
            .expect("three samples give one state");
        let pose = ego.pose;
        let motion = ego.motion();
        let seed = frame_seed(cfg.seed, scenario.seed, f);
        let mut latency = Latency::default();

        let clock = Instant::now();
        let grid = rasterize_bev_at(scenario, &pose, t, &cfg.grid).map_err(|e| e.at_stage("raster"))?;
        let tokens = grid.pooled(cfg.refiner.pool).map_err(|e| e.at_stage("raster"))?;
        let agents = agent_features(scenario, &pose, t);
        latency.raster_ms = ms(clock);
        let mut obs = Observation {
            frame: f,
            grid: &grid,
            tokens: &tokens,
            agents: &agents,
            motion,
            command: scenario.command.one_hot(),
            raw_goal: None,
        };

        let clock = Instant::now();
        let mut corrupted = false;
        let (fresh, guidance) = match (planner.high(), cache.schedule()) {
            (None, _) => (true, None),
            (Some(high), Schedule::RunSlow) => {
                let gt = scenario.reference_trajectory(&pose, t);
                let (g_raw, c) = scorer_goal(cfg, ctx.vocab, scenario, &pose, gt.endpoint(), episode, seed)
                    .map_err(|e| e.at_stage("scorer"))?;
                corrupted = c;
                obs.raw_goal = Some(g_raw);
                let g = high.guidance(&obs).map_err(|e| e.at_stage("refiner"))?;
                cache
                    .publish_fresh(FreshGuidance {
                        frame: f,
                        pose,
                        guidance: g,
                        motion,
                        plan: None,
                    })
                    .map_err(|e| e.at_stage("multirate"))?;
                (true, Some(g))
            }
            (Some(_), Schedule::UseExtension { offset }) => {
                let dac = if ctx.mode.needs_dac() {
                    Some(
                        scorer::score_dac(ctx.vocab, &scenario.layout, &pose, cfg.score.sigma, seed)
                            .map_err(|e| e.at_stage("extension"))?,
                    )
                } else {
                    None
                };
                let fresh = cache
                    .fresh()
                    .ok_or_else(|| Error::invalid("no fresh guidance to extend").at_stage("extension"))?;
                let g = extend(
                    ctx.mode,
                    &ExtensionContext {
                        fresh,
                        offset,
                        pose,
                        vocab: ctx.vocab,
                        dac: dac.as_deref(),
                        tau: cfg.multirate.tau,
                        predictor: ctx.predictor,
                    },
                )
                .map_err(|e| e.at_stage("extension"))?;
                cache.record_extension(g).map_err(|e| e.at_stage("extension"))?;
                (false, Some(g))
            }
        };
        latency.slow_ms = ms(clock);

        let clock = Instant::now();
        let plan = planner
            .low()
            .plan(&obs, guidance.as_ref())
            .map_err(|e| e.at_stage("plan"))?;
        latency.plan_ms = ms(clock);
        let traj = plan.trajectory().clone();
        if fresh {
            cache.attach_plan(&traj);
        }

        let gt = scenario.reference_trajectory(&pose, t);
        let route = RouteFrame::new(scenario.route(), pose, scenario.ego.plan.arc_length(t));
        let prev_local = previous.as_ref().map(|(p, at)| p.to_world(at).to_local(&pose));
        let agent_src = scenario.frame_agents(pose, t);
        let scores = score_frame(
            &FrameInputs {
                plan: &traj,
                gt: &gt,
                previous: prev_local.as_ref().map(|p| (p, 1)),
                layout: &scenario.layout,
                route: &route,
                agents: &agent_src,
            },
            &cfg.metrics,
        );

        let step = traj.points()[0];
        samples.push(pose.compose(&Pose::new(step[0], step[1], step[2])));
        previous = Some((traj, pose));
        cache.advance();
        frames.push(FrameRecord {
            frame: f,
            pose,
            fresh,
            guidance,
            raw_goal: obs.raw_goal,
            corrupted,
            plan,
            scores,
            latency,
        });
    }
    Ok(RolloutRecord {
        scenario_seed: scenario.seed,
        frames,
    })
}
