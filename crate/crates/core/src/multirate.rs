//! Multi-rate guidance. The slow system runs on every `k`-th frame; skipped
//! frames use an extended goal derived from the last fresh guidance.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{rng, Adam, Linear, Mlp, ParamSet, Tape, Tensor, Var};
use crate::scene::{dist, Point, Pose, Trajectory, DT};
use crate::uncertainty::Guidance;
use crate::vocab::GoalVocabulary;

/// Default DAC threshold for guided extrapolation.
pub const DEFAULT_TAU: f64 = 0.5;

/// Extension strategy for skipped frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// No extension: the slow system runs every frame.
    Gamma0,
    /// Learned predictor, inherited scale.
    Gamma1,
    /// Linear kinematic extrapolation.
    Gamma2,
    /// Kinematic extrapolation snapped to drivable candidates.
    Gamma3,
    /// As `Gamma3`, with the scale from the predictor's uncertainty head.
    Gamma4,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Gamma0, Mode::Gamma1, Mode::Gamma2, Mode::Gamma3, Mode::Gamma4];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Gamma0 => "gamma0",
            Mode::Gamma1 => "gamma1",
            Mode::Gamma2 => "gamma2",
            Mode::Gamma3 => "gamma3",
            Mode::Gamma4 => "gamma4",
        }
    }

    pub fn needs_predictor(&self) -> bool {
        matches!(self, Mode::Gamma1 | Mode::Gamma4)
    }

    pub fn needs_dac(&self) -> bool {
        matches!(self, Mode::Gamma3 | Mode::Gamma4)
    }

    /// Slow-system period used by the ablation for this mode.
    pub fn period(&self, k: usize) -> usize {
        if *self == Mode::Gamma0 {
            1
        } else {
            k
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown multirate mode '{s}'")))
    }
}

/// Reference point and motion at the end of a planned trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinematicState {
    pub mu_current: Point,
    pub v0: Point,
    pub a: Point,
    pub t0: f64,
}

/// Finite-difference kinematics at the last trajectory point. With three or
/// more points the velocity is the second-order one-sided difference and the
/// acceleration the second difference, both exact on constant-acceleration
/// paths; with two points the velocity is the last segment and `a = 0`.
pub fn derive_kinematics(traj: &Trajectory) -> Result<KinematicState> {
    let n = traj.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "kinematics need at least 2 points, got {n}"
        )));
    }
    let p = |i: usize| traj.xy(i);
    let (v0, a) = if n >= 3 {
        let (p0, p1, p2) = (p(n - 3), p(n - 2), p(n - 1));
        let f = |k: usize| {
            (
                (3.0 * p2[k] - 4.0 * p1[k] + p0[k]) / (2.0 * DT),
                (p2[k] - 2.0 * p1[k] + p0[k]) / (DT * DT),
            )
        };
        let (x, y) = (f(0), f(1));
        ([x.0, y.0], [x.1, y.1])
    } else {
        let (p1, p2) = (p(0), p(1));
        ([(p2[0] - p1[0]) / DT, (p2[1] - p1[1]) / DT], [0.0, 0.0])
    };
    Ok(KinematicState {
        mu_current: p(n - 1),
        v0,
        a,
        t0: Trajectory::time(n - 1),
    })
}

/// `μ_current + v₀·Δt + ½·a·Δt²` with `Δt = t − t₀`.
pub fn extrapolate_linear(state: &KinematicState, t: f64) -> Result<Point> {
    let dt = t - state.t0;
    if !(dt >= 0.0) {
        return Err(Error::invalid(format!(
            "extrapolation time {t} precedes t0 = {}",
            state.t0
        )));
    }
    let f = |k: usize| state.mu_current[k] + state.v0[k] * dt + 0.5 * state.a[k] * dt * dt;
    Ok([f(0), f(1)])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DacExtension {
    pub point: Point,
    /// Candidate index when the point was replaced by a vocabulary entry.
    pub snapped: Option<usize>,
    /// No candidate met the threshold; `point` is the linear estimate.
    pub infeasible: bool,
}

/// Keeps `mu_linear` when its nearest candidate is drivable enough,
/// otherwise moves to the closest candidate whose score reaches `tau`.
/// Ties go to the lowest index.
pub fn extrapolate_dac_guided(
    mu_linear: Point,
    vocab: &GoalVocabulary,
    dac: &[f64],
    tau: f64,
) -> Result<DacExtension> {
    if dac.len() != vocab.len() {
        return Err(Error::invalid(format!(
            "{} dac scores for {} candidates",
            dac.len(),
            vocab.len()
        )));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid(format!("tau must lie in [0, 1], got {tau}")));
    }
    let (nearest, _) = vocab.nearest(mu_linear);
    if dac[nearest] >= tau {
        return Ok(DacExtension {
            point: mu_linear,
            snapped: None,
            infeasible: false,
        });
    }
    let mut best: Option<(f64, usize)> = None;
    for (i, g) in vocab.candidates().iter().enumerate() {
        if dac[i] < tau {
            continue;
        }
        let d = dist(*g, mu_linear);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    Ok(match best {
        Some((_, i)) => DacExtension {
            point: vocab.get(i),
            snapped: Some(i),
            infeasible: false,
        },
        None => {
            log::warn!("no candidate reaches dac >= {tau}; keeping the linear estimate");
            DacExtension {
                point: mu_linear,
                snapped: None,
                infeasible: true,
            }
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    RunSlow,
    /// Frames elapsed since the last fresh guidance.
    UseExtension { offset: usize },
}

pub fn schedule(frame: usize, k: usize) -> Result<Schedule> {
    if k < 1 {
        return Err(Error::invalid("multirate period k must be >= 1"));
    }
    Ok(match frame % k {
        0 => Schedule::RunSlow,
        offset => Schedule::UseExtension { offset },
    })
}

/// Slow-system invocations over `frames` frames: `ceil(frames / k)`.
pub fn slow_invocations(frames: usize, k: usize) -> Result<usize> {
    if k < 1 {
        return Err(Error::invalid("multirate period k must be >= 1"));
    }
    Ok(frames.div_ceil(k))
}

/// Output of the slow system on a fresh frame, with the context needed to
/// extend it.
#[derive(Clone, Debug, PartialEq)]
pub struct FreshGuidance {
    pub frame: usize,
    /// World pose of the ego on the fresh frame; `guidance` is in this frame.
    pub pose: Pose,
    pub guidance: Guidance,
    pub motion: [f64; 4],
    /// Plan produced on the fresh frame (same ego frame).
    pub plan: Option<Trajectory>,
}

impl FreshGuidance {
    /// Re-expresses a point from the fresh frame in another ego frame.
    pub fn transfer(&self, p: Point, pose: &Pose) -> Point {
        pose.to_local(self.pose.to_world(p))
    }
}

/// Holds the latest fresh guidance and the extensions issued from it.
#[derive(Clone, Debug)]
pub struct GuidanceCache {
    k: usize,
    frame: usize,
    fresh: Option<FreshGuidance>,
    extended: Vec<(usize, Guidance)>,
}

impl GuidanceCache {
    pub fn new(k: usize) -> Result<Self> {
        if k < 1 {
            return Err(Error::invalid("multirate period k must be >= 1"));
        }
        Ok(Self {
            k,
            frame: 0,
            fresh: None,
            extended: Vec::new(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn frame(&self) -> usize {
        self.frame
    }

    pub fn schedule(&self) -> Schedule {
        schedule(self.frame, self.k).expect("k validated")
    }

    pub fn publish_fresh(&mut self, fresh: FreshGuidance) -> Result<()> {
        if self.schedule() != Schedule::RunSlow || fresh.frame != self.frame {
            return Err(Error::invalid(format!(
                "fresh guidance published on frame {} (counter {}, k {})",
                fresh.frame, self.frame, self.k
            )));
        }
        self.fresh = Some(fresh);
        self.extended.clear();
        Ok(())
    }

    /// Attaches the fresh frame's plan once the fast system has produced it.
    pub fn attach_plan(&mut self, plan: &Trajectory) {
        if let Some(f) = self.fresh.as_mut().filter(|f| f.frame == self.frame) {
            f.plan = Some(plan.clone());
        }
    }

    pub fn record_extension(&mut self, g: Guidance) -> Result<()> {
        match self.schedule() {
            Schedule::UseExtension { .. } if self.fresh.is_some() => {
                self.extended.push((self.frame, g));
                Ok(())
            }
            _ => Err(Error::invalid(format!(
                "extension recorded on frame {} without a pending fresh guidance",
                self.frame
            ))),
        }
    }

    pub fn fresh(&self) -> Option<&FreshGuidance> {
        self.fresh.as_ref()
    }

    pub fn extensions(&self) -> &[(usize, Guidance)] {
        &self.extended
    }

    pub fn advance(&mut self) {
        self.frame += 1;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub hidden: usize,
    /// Number of future-frame heads (offsets `1..=max_offset`).
    pub max_offset: usize,
    /// Metres per unit of the offset head.
    pub offset_scale: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            max_offset: 1,
            offset_scale: 5.0,
        }
    }
}

const PREDICTOR_INPUTS: usize = 8;

/// Learned extension: a shared trunk over the fresh guidance and ego motion,
/// then one goal head and one scale head per frame offset.
#[derive(Clone, Debug)]
pub struct Predictor {
    pub params: ParamSet,
    pub config: PredictorConfig,
    trunk: Mlp,
    mu_heads: Vec<Linear>,
    b_heads: Vec<Linear>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictorSample {
    pub guidance: Guidance,
    pub motion: [f64; 4],
    pub offset: usize,
    /// Next goal in the fresh frame.
    pub target_mu: Point,
    pub target_b: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PredictorTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch: 16,
            lr: 3e-3,
            seed: 0,
        }
    }
}

impl Predictor {
    pub fn new(config: PredictorConfig, seed: u64) -> Self {
        let mut r = rng::derived(seed, 0x9E7D);
        let mut params = ParamSet::new();
        let h = config.hidden;
        let trunk = Mlp::new(&mut params, "predictor.trunk", &[PREDICTOR_INPUTS, h, h], &mut r);
        let mut mu_heads = Vec::new();
        let mut b_heads = Vec::new();
        for j in 1..=config.max_offset {
            let m = Linear::new(&mut params, &format!("predictor.mu{j}"), h, 2, true, &mut r);
            let b = Linear::new(&mut params, &format!("predictor.b{j}"), h, 2, true, &mut r);
            m.zero(&mut params);
            b.zero(&mut params);
            mu_heads.push(m);
            b_heads.push(b);
        }
        Self {
            params,
            config,
            trunk,
            mu_heads,
            b_heads,
        }
    }

    fn check_offset(&self, offset: usize) -> Result<()> {
        if offset == 0 || offset > self.mu_heads.len() {
            return Err(Error::invalid(format!(
                "no predictor head for frame offset {offset} (have 1..={})",
                self.mu_heads.len()
            )));
        }
        Ok(())
    }

    fn features(g: &Guidance, motion: &[f64; 4]) -> Tensor {
        let v = [
            g.mu[0] * 0.1,
            g.mu[1] * 0.1,
            g.b[0].ln(),
            g.b[1].ln(),
            motion[0] * 0.1,
            motion[1] * 0.1,
            motion[2] * 0.1,
            motion[3] * 0.1,
        ];
        Tensor::row(&v)
    }

    /// Records the heads; returns `(μ, log b)` nodes.
    fn forward(&self, tape: &mut Tape, g: &Guidance, motion: &[f64; 4], offset: usize) -> Result<(Var, Var)> {
        self.check_offset(offset)?;
        let x = tape.constant(Self::features(g, motion));
        let h = self.trunk.forward(tape, &self.params, x)?;
        let h = tape.silu(h);
        let d = self.mu_heads[offset - 1].forward(tape, &self.params, h)?;
        let d = tape.scale(d, self.config.offset_scale);
        let base = tape.constant(Tensor::row(&g.mu));
        let mu = tape.add(base, d)?;
        let lb = self.b_heads[offset - 1].forward(tape, &self.params, h)?;
        let base_b = tape.constant(Tensor::row(&[g.b[0].ln(), g.b[1].ln()]));
        let log_b = tape.add(base_b, lb)?;
        Ok((mu, log_b))
    }

    /// Extended goal (fresh frame) and, from the scale head, its scale.
    pub fn predict(&self, g: &Guidance, motion: &[f64; 4], offset: usize) -> Result<(Point, [f64; 2])> {
        let mut tape = Tape::new();
        let (mu, log_b) = self.forward(&mut tape, g, motion, offset)?;
        let m = tape.value(mu).data();
        let lb = tape.value(log_b).data();
        Ok(([m[0], m[1]], [lb[0].exp(), lb[1].exp()]))
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.params.save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>, config: PredictorConfig) -> Result<Self> {
        let mut p = Self::new(config, 0);
        p.params.load_from(&ParamSet::load(path)?)?;
        Ok(p)
    }
}

/// L1 on the goal plus L1 on the log-scale. Returns the per-epoch mean loss
/// with the pre-training loss first.
pub fn train_predictor(
    model: &mut Predictor,
    data: &[PredictorSample],
    cfg: &PredictorTrainConfig,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::invalid("predictor training set is empty"));
    }
    let loss_of = |model: &Predictor, tape: &mut Tape, s: &PredictorSample| -> Result<Var> {
        let (mu, log_b) = model.forward(tape, &s.guidance, &s.motion, s.offset)?;
        let mu = tape.scale(mu, 0.1);
        let target = Tensor::row(&[s.target_mu[0] * 0.1, s.target_mu[1] * 0.1]);
        let lm = tape.l1_loss(mu, &target)?;
        let tb = Tensor::row(&[s.target_b[0].ln(), s.target_b[1].ln()]);
        let lb = tape.l1_loss(log_b, &tb)?;
        tape.add(lm, lb)
    };
    let mut curve = Vec::with_capacity(cfg.epochs + 1);
    let mut initial = 0.0;
    for s in data {
        let mut tape = Tape::new();
        let l = loss_of(model, &mut tape, s)?;
        initial += tape.value(l).item();
    }
    curve.push(initial / data.len() as f64);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut r = rng::derived(cfg.seed, 0x9E7E);
    let mut opt = Adam::new(cfg.lr);
    for epoch in 1..=cfg.epochs {
        opt.lr = crate::math::cosine_lr(cfg.lr, 0.05, epoch - 1, cfg.epochs);
        order.shuffle(&mut r);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch.max(1)) {
            model.params.zero_grad();
            for &i in chunk {
                let mut tape = Tape::new();
                let l = loss_of(model, &mut tape, &data[i])?;
                let v = tape.value(l).item();
                if !v.is_finite() {
                    return Err(Error::Diverged { epoch, loss: v });
                }
                total += v;
                let l = tape.scale(l, 1.0 / chunk.len() as f64);
                tape.backward(l, &mut model.params)?;
            }
            opt.step(&mut model.params);
        }
        curve.push(total / data.len() as f64);
    }
    Ok(curve)
}

/// Everything needed to extend guidance onto a skipped frame.
pub struct ExtensionContext<'a> {
    pub fresh: &'a FreshGuidance,
    pub offset: usize,
    /// World pose of the ego on the skipped frame.
    pub pose: Pose,
    pub vocab: &'a GoalVocabulary,
    /// Candidate drivability on the skipped frame (needed by the DAC modes).
    pub dac: Option<&'a [f64]>,
    pub tau: f64,
    pub predictor: Option<&'a Predictor>,
}

/// Linear extrapolation of the fresh plan `offset` frames ahead, in the
/// skipped frame's ego coordinates.
pub fn linear_extension(fresh: &FreshGuidance, offset: usize, pose: &Pose) -> Result<Point> {
    let plan = fresh
        .plan
        .as_ref()
        .ok_or_else(|| Error::invalid("fresh guidance has no plan to extrapolate"))?;
    let state = derive_kinematics(plan)?;
    let p = extrapolate_linear(&state, state.t0 + offset as f64 * DT)?;
    Ok(fresh.transfer(p, pose))
}

/// Extended guidance for a skipped frame under `mode`.
pub fn extend(mode: Mode, ctx: &ExtensionContext<'_>) -> Result<Guidance> {
    let inherited = ctx.fresh.guidance.b;
    let predictor = || {
        ctx.predictor
            .ok_or_else(|| Error::invalid(format!("{mode} needs a trained predictor")))
    };
    let dac_guided = || -> Result<Point> {
        let lin = linear_extension(ctx.fresh, ctx.offset, &ctx.pose)?;
        let dac = ctx
            .dac
            .ok_or_else(|| Error::invalid(format!("{mode} needs candidate dac scores")))?;
        Ok(extrapolate_dac_guided(lin, ctx.vocab, dac, ctx.tau)?.point)
    };
    match mode {
        Mode::Gamma0 => Err(Error::invalid("gamma0 never extends guidance")),
        Mode::Gamma1 => {
            let (mu, _) = predictor()?.predict(&ctx.fresh.guidance, &ctx.fresh.motion, ctx.offset)?;
            Guidance::new(ctx.fresh.transfer(mu, &ctx.pose), inherited)
        }
        Mode::Gamma2 => Guidance::new(linear_extension(ctx.fresh, ctx.offset, &ctx.pose)?, inherited),
        Mode::Gamma3 => Guidance::new(dac_guided()?, inherited),
        Mode::Gamma4 => {
            let (_, b) = predictor()?.predict(&ctx.fresh.guidance, &ctx.fresh.motion, ctx.offset)?;
            Guidance::new(dac_guided()?, b)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(pts: &[[f64; 2]]) -> Trajectory {
        Trajectory::new(pts.iter().map(|p| [p[0], p[1], 0.0]).collect()).unwrap()
    }

    #[test]
    fn kinematics_by_hand() {
        let t = traj(&[[5.0, 0.0], [10.0, 0.0], [15.0, 0.0]]);
        let k = derive_kinematics(&t).unwrap();
        assert_eq!(k.v0, [10.0, 0.0]);
        assert_eq!(k.a, [0.0, 0.0]);
        assert_eq!(k.mu_current, [15.0, 0.0]);
        assert_eq!(k.t0, 1.5);
        let two = derive_kinematics(&traj(&[[1.0, 0.0], [2.0, 1.0]])).unwrap();
        assert_eq!(two.a, [0.0, 0.0]);
        assert!(derive_kinematics(&traj(&[[1.0, 0.0]])).is_err());
    }

    #[test]
    fn kinematics_recovers_constant_acceleration() {
        // x = t² sampled at 0.5 s steps
        let pts: Vec<[f64; 2]> = (1..=8).map(|i| [(i as f64 * DT).powi(2), 0.0]).collect();
        let k = derive_kinematics(&traj(&pts)).unwrap();
        assert!((k.a[0] - 2.0).abs() < 1e-12);
        assert!((k.v0[0] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn linear_extrapolation_by_hand() {
        let s = KinematicState {
            mu_current: [0.0, 0.0],
            v0: [10.0, 0.0],
            a: [0.0, 0.0],
            t0: 4.0,
        };
        assert_eq!(extrapolate_linear(&s, 4.0).unwrap(), [0.0, 0.0]);
        assert_eq!(extrapolate_linear(&s, 4.5).unwrap(), [5.0, 0.0]);
        assert!(extrapolate_linear(&s, 3.9).is_err());
        let s = KinematicState {
            mu_current: [10.0, 0.0],
            v0: [8.0, 0.0],
            a: [2.0, 0.0],
            t0: 0.0,
        };
        assert_eq!(extrapolate_linear(&s, 0.5).unwrap(), [14.25, 0.0]);
    }

    #[test]
    fn dac_guided_snaps_to_feasible() {
        let v = GoalVocabulary::new(vec![[5.0, 0.0], [4.5, 0.5]]).unwrap();
        let e = extrapolate_dac_guided([5.0, 0.0], &v, &[0.2, 0.9], DEFAULT_TAU).unwrap();
        assert_eq!(e.point, [4.5, 0.5]);
        assert_eq!(e.snapped, Some(1));
        let e = extrapolate_dac_guided([5.0, 0.0], &v, &[0.9, 0.9], DEFAULT_TAU).unwrap();
        assert_eq!(e.point, [5.0, 0.0]);
        let e = extrapolate_dac_guided([5.0, 0.0], &v, &[0.1, 0.1], DEFAULT_TAU).unwrap();
        assert!(e.infeasible && e.point == [5.0, 0.0]);
        assert!(extrapolate_dac_guided([0.0, 0.0], &v, &[1.0], 0.5).is_err());
        assert!(extrapolate_dac_guided([0.0, 0.0], &v, &[1.0, 1.0], 1.5).is_err());
    }

    #[test]
    fn schedule_law() {
        let count = |n: usize, k: usize| {
            (0..n)
                .filter(|&f| schedule(f, k).unwrap() == Schedule::RunSlow)
                .count()
        };
        assert_eq!(count(10, 1), 10);
        assert_eq!(count(10, 2), 5);
        assert_eq!(count(7, 3), 3);
        assert_eq!(slow_invocations(7, 3).unwrap(), 3);
        assert_eq!(schedule(5, 3).unwrap(), Schedule::UseExtension { offset: 2 });
        assert!(schedule(0, 0).is_err());
    }

    #[test]
    fn cache_enforces_schedule() {
        let mut c = GuidanceCache::new(2).unwrap();
        let g = Guidance::new([10.0, 0.0], [0.5, 0.7]).unwrap();
        let fresh = |frame| FreshGuidance {
            frame,
            pose: Pose::IDENTITY,
            guidance: g,
            motion: [5.0, 0.0, 0.0, 0.0],
            plan: None,
        };
        assert!(c.record_extension(g).is_err());
        c.publish_fresh(fresh(0)).unwrap();
        c.advance();
        assert!(c.publish_fresh(fresh(1)).is_err());
        c.record_extension(g).unwrap();
        assert_eq!(c.extensions().len(), 1);
        c.advance();
        c.publish_fresh(fresh(2)).unwrap();
        assert!(c.extensions().is_empty());
    }

    #[test]
    fn predictor_zero_heads_inherit() {
        let p = Predictor::new(PredictorConfig::default(), 1);
        let g = Guidance::new([20.0, -1.0], [0.4, 0.9]).unwrap();
        let (mu, b) = p.predict(&g, &[5.0, 0.0, 0.1, 0.0], 1).unwrap();
        assert_eq!(mu, g.mu);
        assert!((b[0] - 0.4).abs() < 1e-15 && (b[1] - 0.9).abs() < 1e-15);
        assert!(p.predict(&g, &[0.0; 4], 2).is_err());
        assert!(p.predict(&g, &[0.0; 4], 0).is_err());
    }

    #[test]
    fn extension_modes_inherit_scale() {
        let plan = traj(&(1..=8).map(|i| [i as f64 * 2.5, 0.0]).collect::<Vec<_>>());
        let fresh = FreshGuidance {
            frame: 0,
            pose: Pose::IDENTITY,
            guidance: Guidance::new([20.0, 0.0], [0.3, 0.6]).unwrap(),
            motion: [5.0, 0.0, 0.0, 0.0],
            plan: Some(plan),
        };
        let vocab = GoalVocabulary::new(vec![[20.0, 0.0], [22.0, 3.0]]).unwrap();
        let pose = Pose::new(2.5, 0.0, 0.0);
        let ctx = ExtensionContext {
            fresh: &fresh,
            offset: 1,
            pose,
            vocab: &vocab,
            dac: Some(&[1.0, 1.0]),
            tau: DEFAULT_TAU,
            predictor: None,
        };
        let g2 = extend(Mode::Gamma2, &ctx).unwrap();
        assert!((g2.mu[0] - 20.0).abs() < 1e-12 && g2.mu[1].abs() < 1e-12);
        assert_eq!(g2.b, fresh.guidance.b);
        assert_eq!(extend(Mode::Gamma3, &ctx).unwrap().b, fresh.guidance.b);
        assert!(extend(Mode::Gamma1, &ctx).is_err());
        assert!(extend(Mode::Gamma0, &ctx).is_err());
    }
}
