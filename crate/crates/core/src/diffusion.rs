//! Anchor-initialized truncated diffusion decoder.
//!
//! Each anchor trajectory gets a query built from the anchor shape, BEV
//! features along it, ego motion and the command; guidance is injected into
//! all queries. Sampling starts at the anchor, takes `S` deterministic
//! clean-estimate steps, and a confidence head picks one candidate.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::injection::{project_phi, InjectionConfig, InjectionModel};
use crate::math::{kmeans, rng, Adam, Mlp, ParamSet, Tape, Tensor, Var};
use crate::scene::bev::{BevGrid, BEV_CHANNELS};
use crate::scene::{Trajectory, HORIZON};
use crate::uncertainty::Guidance;

pub const DEFAULT_ANCHORS: usize = 20;
/// Flattened trajectory width (`HORIZON` waypoints of x, y, heading).
pub const TRAJ_DIM: usize = HORIZON * 3;
/// Per-coordinate scaling into network space.
const NORM: [f64; 3] = [0.1, 0.1, 1.0];
/// Anchor waypoints whose BEV features enter the query.
const ANCHOR_PROBES: [usize; 2] = [3, 7];
const CONTEXT_DIM: usize = TRAJ_DIM + ANCHOR_PROBES.len() * BEV_CHANNELS + 4 + 4;
/// Highest power of the polynomial time basis of the denoiser residual.
pub const RESIDUAL_DEGREE: usize = 4;
const RESIDUAL_DIM: usize = 3 * RESIDUAL_DEGREE;

/// `[RESIDUAL_DIM, TRAJ_DIM]` map from per-coordinate coefficients of
/// `τ, τ², …` (τ = waypoint time / horizon) to flattened waypoints.
fn residual_basis() -> Tensor {
    let mut data = vec![0.0; RESIDUAL_DIM * TRAJ_DIM];
    for c in 0..3 {
        for p in 1..=RESIDUAL_DEGREE {
            let row = c * RESIDUAL_DEGREE + p - 1;
            for i in 0..HORIZON {
                let tau = (i + 1) as f64 / HORIZON as f64;
                data[row * TRAJ_DIM + i * 3 + c] = tau.powi(p as i32);
            }
        }
    }
    Tensor::new(vec![RESIDUAL_DIM, TRAJ_DIM], data).expect("basis shape")
}

fn normalize(flat: &[f64]) -> Vec<f64> {
    flat.iter().enumerate().map(|(i, v)| v * NORM[i % 3]).collect()
}

fn denormalize(flat: &[f64]) -> Vec<f64> {
    flat.iter().enumerate().map(|(i, v)| v / NORM[i % 3]).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    anchors: Vec<Trajectory>,
}

impl AnchorSet {
    pub fn new(anchors: Vec<Trajectory>) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::invalid("anchor set needs at least one trajectory"));
        }
        if anchors.iter().any(|a| a.len() != HORIZON) {
            return Err(Error::invalid(format!("anchors must have {HORIZON} waypoints")));
        }
        Ok(Self { anchors })
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn get(&self, k: usize) -> &Trajectory {
        &self.anchors[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Trajectory> {
        self.anchors.iter()
    }

    /// Index of the anchor closest to `traj` in waypoint positions.
    pub fn closest(&self, traj: &Trajectory) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (k, a) in self.anchors.iter().enumerate() {
            let d: f64 = (0..HORIZON)
                .map(|i| {
                    let (p, q) = (a.xy(i), traj.xy(i));
                    (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)
                })
                .sum();
            if d < best.0 {
                best = (d, k);
            }
        }
        best.1
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let a: AnchorSet = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::new(a.anchors)
    }
}

/// k-means over flattened `(x, y, heading)` sequences.
pub fn make_anchors(trajs: &[Trajectory], k: usize, seed: u64) -> Result<AnchorSet> {
    if k > trajs.len() {
        return Err(Error::invalid(format!(
            "{k} anchors requested from {} trajectories",
            trajs.len()
        )));
    }
    let pts: Vec<Vec<f64>> = trajs.iter().map(|t| t.flat()).collect();
    let km = kmeans(&pts, k, seed)?;
    AnchorSet::new(
        km.centroids
            .iter()
            .map(|c| Trajectory::from_flat(c))
            .collect::<Result<_>>()?,
    )
}

/// Noise levels `σ_0 > σ_1 > … > σ_S = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    /// Geometric levels `σ_max · ratioˢ` for `s < steps`, then 0.
    pub fn geometric(steps: usize, sigma_max: f64, ratio: f64) -> Result<Self> {
        if steps < 1 {
            return Err(Error::invalid("noise schedule needs at least one step"));
        }
        if !(sigma_max > 0.0) || !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::invalid(format!(
                "need sigma_max > 0 and ratio in (0, 1), got {sigma_max}, {ratio}"
            )));
        }
        let mut sigmas: Vec<f64> = (0..steps).map(|s| sigma_max * ratio.powi(s as i32)).collect();
        sigmas.push(0.0);
        Ok(Self { sigmas })
    }

    /// All levels zero; every step returns the clean estimate.
    pub fn zero(steps: usize) -> Self {
        Self {
            sigmas: vec![0.0; steps.max(1) + 1],
        }
    }

    pub fn steps(&self) -> usize {
        self.sigmas.len() - 1
    }

    pub fn sigma(&self, step: usize) -> f64 {
        self.sigmas[step]
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::geometric(2, 2.0, 0.5).expect("valid default schedule")
    }
}

/// `anchor + σ_step · ε` with `ε` standard normal per coordinate.
pub fn perturb(anchor: &Trajectory, schedule: &NoiseSchedule, step: usize, seed: u64) -> Result<Trajectory> {
    if step >= schedule.steps() {
        return Err(Error::invalid(format!(
            "step {step} outside a {}-step schedule",
            schedule.steps()
        )));
    }
    let sigma = schedule.sigma(step);
    let mut r = rng::seeded(seed);
    let flat: Vec<f64> = anchor
        .flat()
        .into_iter()
        .map(|v| {
            let e: f64 = StandardNormal.sample(&mut r);
            v + sigma * e
        })
        .collect();
    Trajectory::from_flat(&flat)
}

/// `x' = x̂ + (σ_to/σ_from)(x − x̂)`; returns `x̂` when `σ_to = 0`.
pub fn denoise_update(x: &[f64], x_hat: &[f64], sigma_from: f64, sigma_to: f64) -> Result<Vec<f64>> {
    if x.len() != x_hat.len() {
        return Err(Error::invalid("denoise update on mismatched lengths"));
    }
    let valid = sigma_to >= 0.0 && (sigma_to < sigma_from || (sigma_to == 0.0 && sigma_from == 0.0));
    if !valid {
        return Err(Error::invalid(format!(
            "denoise step must lower the noise level, got {sigma_from} -> {sigma_to}"
        )));
    }
    if sigma_to == 0.0 {
        return Ok(x_hat.to_vec());
    }
    let r = sigma_to / sigma_from;
    Ok(x.iter().zip(x_hat).map(|(a, h)| h + r * (a - h)).collect())
}

/// Anything that can produce a clean estimate of a noisy trajectory.
pub trait CleanEstimator {
    /// `x` is a flattened trajectory for candidate `k` at noise level `sigma`.
    fn estimate(&self, x: &[f64], sigma: f64, k: usize) -> Result<Vec<f64>>;
}

/// One denoising step with an arbitrary estimator.
pub fn denoise_step<E: CleanEstimator + ?Sized>(
    est: &E,
    x: &Trajectory,
    sigma_from: f64,
    sigma_to: f64,
    k: usize,
) -> Result<Trajectory> {
    let flat = x.flat();
    let x_hat = est.estimate(&flat, sigma_from, k)?;
    Trajectory::from_flat(&denoise_update(&flat, &x_hat, sigma_from, sigma_to)?)
}

/// Runs the full chain from `start` with an arbitrary estimator.
pub fn run_chain<E: CleanEstimator + ?Sized>(
    est: &E,
    start: &Trajectory,
    schedule: &NoiseSchedule,
    k: usize,
) -> Result<Trajectory> {
    let mut x = start.clone();
    for s in 0..schedule.steps() {
        x = denoise_step(est, &x, schedule.sigma(s), schedule.sigma(s + 1), k)?;
    }
    Ok(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub dim: usize,
    pub hidden: usize,
    pub noise_embed: usize,
    pub steps: usize,
    pub sigma_max: f64,
    pub sigma_ratio: f64,
    /// Weight of the confidence cross-entropy next to the L1 term.
    pub confidence_weight: f64,
    /// Whether guidance is injected (off for the goal-free baseline).
    pub guided: bool,
    pub injection: InjectionConfig,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            hidden: 64,
            noise_embed: 16,
            steps: 2,
            sigma_max: 2.0,
            sigma_ratio: 0.5,
            confidence_weight: 0.5,
            guided: true,
            injection: InjectionConfig::default(),
        }
    }
}

impl PlannerConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::geometric(self.steps, self.sigma_max, self.sigma_ratio)
    }
}

/// Per-frame planner input: one context row per anchor and the sampled
/// guidance, if any.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanInput {
    pub context: Tensor,
    pub guidance: Option<GuidanceInput>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceInput {
    pub phi: Vec<f64>,
    pub b: [f64; 2],
}

impl PlanInput {
    pub fn new(
        anchors: &AnchorSet,
        grid: &BevGrid,
        motion: [f64; 4],
        command: [f64; 4],
        guidance: Option<&Guidance>,
    ) -> Result<Self> {
        if !motion.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("ego motion".into()));
        }
        let mut rows = Vec::with_capacity(anchors.len());
        for a in anchors.iter() {
            let mut row = normalize(&a.flat());
            for &i in &ANCHOR_PROBES {
                row.extend(grid.sample(a.xy(i)).features);
            }
            row.extend(motion.iter().map(|m| m * 0.1));
            row.extend(command);
            rows.push(row);
        }
        let guidance = match guidance {
            Some(g) => Some(GuidanceInput {
                phi: project_phi(grid, g.mu)?.features,
                b: g.b,
            }),
            None => None,
        };
        Ok(Self {
            context: Tensor::from_rows(&rows, CONTEXT_DIM)?,
            guidance,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub candidates: Vec<Trajectory>,
    /// Softmax of the confidence logits.
    pub confidence: Vec<f64>,
    pub selected: usize,
}

impl Plan {
    pub fn trajectory(&self) -> &Trajectory {
        &self.candidates[self.selected]
    }

    /// CSV rows `frame,candidate,t,x,y,heading,confidence`.
    pub fn write_csv_rows(&self, frame: usize, out: &mut String) {
        use std::fmt::Write;
        for (k, c) in self.candidates.iter().enumerate() {
            for (i, p) in c.points().iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{frame},{k},{},{},{},{},{}",
                    Trajectory::time(i),
                    p[0],
                    p[1],
                    p[2],
                    self.confidence[k]
                );
            }
        }
    }
}

pub const PLAN_CSV_HEADER: &str = "frame,candidate,t,x,y,heading,confidence";

#[derive(Clone, Debug)]
struct PlannerNet {
    query: Mlp,
    injection: Option<InjectionModel>,
    denoiser: Mlp,
    confidence: Mlp,
}

#[derive(Clone, Debug)]
pub struct Planner {
    pub params: ParamSet,
    pub config: PlannerConfig,
    pub anchors: AnchorSet,
    schedule: NoiseSchedule,
    net: PlannerNet,
    trained: bool,
}

/// Random choices of one training step, drawn up front so the loss is a
/// pure function of the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainDraw {
    pub step: usize,
    /// Interpolation from anchor towards the target for late steps.
    pub lambda: f64,
    pub rows: Vec<usize>,
    pub noise: Vec<Vec<f64>>,
    pub mask: Option<Tensor>,
}

#[derive(Clone, Debug)]
pub struct PlannerSample {
    pub input: PlanInput,
    pub target: Trajectory,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub final_lr_ratio: f64,
    pub seed: u64,
}

impl Default for PlannerTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch: 16,
            lr: 2e-3,
            final_lr_ratio: 0.05,
            seed: 0,
        }
    }
}

/// Mean losses of one training epoch; `l1` is in network units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub l1: f64,
    pub ce: f64,
}

impl Planner {
    pub fn new(config: PlannerConfig, anchors: AnchorSet, seed: u64) -> Result<Self> {
        let schedule = config.schedule()?;
        if config.guided && config.injection.dim != config.dim {
            return Err(Error::invalid("injection dim must equal the query dim"));
        }
        let mut r = rng::derived(seed, 0xD1FF);
        let mut params = ParamSet::new();
        let (d, h) = (config.dim, config.hidden);
        let query = Mlp::new(&mut params, "planner.query", &[CONTEXT_DIM, h, d], &mut r);
        let injection = config
            .guided
            .then(|| InjectionModel::new(&mut params, "planner.inject", config.injection, &mut r));
        let denoiser = Mlp::new(
            &mut params,
            "planner.denoiser",
            &[TRAJ_DIM + config.noise_embed + d, h, h, RESIDUAL_DIM],
            &mut r,
        );
        denoiser.last().zero(&mut params);
        let confidence = Mlp::new(&mut params, "planner.confidence", &[d, h, 1], &mut r);
        Ok(Self {
            params,
            config,
            anchors,
            schedule,
            net: PlannerNet {
                query,
                injection,
                denoiser,
                confidence,
            },
            trained: false,
        })
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn injection(&self) -> Option<&InjectionModel> {
        self.net.injection.as_ref()
    }

    /// Trajectory queries after injection, `[K, d]`.
    pub fn queries(&self, tape: &mut Tape, input: &PlanInput, mask: Option<&Tensor>) -> Result<Var> {
        if input.context.rows() != self.anchors.len() || input.context.cols() != CONTEXT_DIM {
            return Err(Error::Shape {
                op: "planner context",
                left: input.context.shape().to_vec(),
                right: vec![self.anchors.len(), CONTEXT_DIM],
            });
        }
        let c = tape.constant(input.context.clone());
        let q = self.net.query.forward(tape, &self.params, c)?;
        match (&self.net.injection, &input.guidance) {
            (Some(inj), Some(g)) => {
                let phi = tape.constant(Tensor::row(&g.phi));
                let b = tape.constant(Tensor::row(&g.b));
                let f = inj.guidance_feature_var(tape, &self.params, phi, b)?;
                inj.inject_var(tape, &self.params, q, f, mask)
            }
            (Some(_), None) => Err(Error::invalid("guided planner called without guidance")),
            (None, _) => Ok(q),
        }
    }

    /// Clean estimate for rows `x` (network units) at level `sigma`: the
    /// row's anchor `base` plus a polynomial-in-time residual, so every
    /// estimate is as smooth as its anchor.
    pub fn denoise_var(&self, tape: &mut Tape, x: Var, base: Var, sigma: f64, queries: Var) -> Result<Var> {
        let m = tape.value(x).rows();
        let s = tape.constant(Tensor::full(&[m, 1], sigma));
        let e = tape.sinusoidal(s, self.config.noise_embed)?;
        let inp = tape.concat_cols(&[x, e, queries])?;
        let c = self.net.denoiser.forward(tape, &self.params, inp)?;
        let basis = tape.constant(residual_basis());
        let r = tape.matmul(c, basis)?;
        tape.add(base, r)
    }

    pub fn logits_var(&self, tape: &mut Tape, queries: Var) -> Result<Var> {
        let l = self.net.confidence.forward(tape, &self.params, queries)?;
        tape.reshape(l, &[1, self.anchors.len()])
    }

    /// Deterministic inference: every chain starts at its anchor.
    pub fn plan(&self, input: &PlanInput) -> Result<Plan> {
        if !self.trained {
            log::warn!("planning with an untrained planner");
        }
        let k = self.anchors.len();
        let mut tape = Tape::new();
        let q = self.queries(&mut tape, input, None)?;
        let logits = self.logits_var(&mut tape, q)?;
        let confidence = crate::math::softmax(tape.value(logits).data());
        let q_val = tape.value(q).clone();

        let base: Vec<Vec<f64>> = self.anchors.iter().map(|a| normalize(&a.flat())).collect();
        let base = Tensor::from_rows(&base, TRAJ_DIM)?;
        let mut x: Vec<Vec<f64>> = (0..k).map(|r| base.row_slice(r).to_vec()).collect();
        for s in 0..self.schedule.steps() {
            let (sf, st) = (self.schedule.sigma(s), self.schedule.sigma(s + 1));
            let mut t = Tape::new();
            let xv = t.constant(Tensor::from_rows(&x, TRAJ_DIM)?);
            let qv = t.constant(q_val.clone());
            let bv = t.constant(base.clone());
            let xh = self.denoise_var(&mut t, xv, bv, sf, qv)?;
            let xh = t.value(xh);
            for (r, row) in x.iter_mut().enumerate() {
                *row = denoise_update(row, xh.row_slice(r), sf, st)?;
            }
        }
        let candidates = x
            .iter()
            .map(|row| Trajectory::from_flat(&denormalize(row)))
            .collect::<Result<Vec<_>>>()?;
        let mut selected = 0;
        for i in 1..k {
            if confidence[i] > confidence[selected] {
                selected = i;
            }
        }
        Ok(Plan {
            candidates,
            confidence,
            selected,
        })
    }

    /// Draws the random parts of a training step for `sample`.
    pub fn draw(&self, sample: &PlannerSample, r: &mut impl Rng) -> TrainDraw {
        let k = self.anchors.len();
        let winner = self.anchors.closest(&sample.target);
        let mut rows = vec![winner];
        if k > 1 {
            let mut other = r.random_range(0..k - 1);
            if other >= winner {
                other += 1;
            }
            rows.push(other);
        }
        let step = r.random_range(0..self.schedule.steps());
        let lambda = if step == 0 { 0.0 } else { r.random::<f64>() };
        let noise = rows
            .iter()
            .map(|_| (0..TRAJ_DIM).map(|_| StandardNormal.sample(r)).collect())
            .collect();
        let mask = self
            .net
            .injection
            .as_ref()
            .filter(|inj| inj.config.dropout > 0.0)
            .map(|inj| inj.dropout_mask(r));
        TrainDraw {
            step,
            lambda,
            rows,
            noise,
            mask,
        }
    }

    /// Returns `(L1, CE)` nodes for one sample under a fixed draw.
    pub fn loss_parts(&self, tape: &mut Tape, sample: &PlannerSample, draw: &TrainDraw) -> Result<(Var, Var)> {
        let q = self.queries(tape, &sample.input, draw.mask.as_ref())?;
        let logits = self.logits_var(tape, q)?;
        let winner = self.anchors.closest(&sample.target);
        let lp = tape.log_softmax_rows(logits);
        let lw = tape.pick(lp, winner)?;
        let ce = tape.scale(lw, -1.0);

        let sigma = self.schedule.sigma(draw.step);
        let target = sample.target.flat();
        let mut xs = Vec::with_capacity(draw.rows.len());
        let mut bases = Vec::with_capacity(draw.rows.len());
        for (j, &k) in draw.rows.iter().enumerate() {
            let a = self.anchors.get(k).flat();
            bases.push(normalize(&a));
            let row: Vec<f64> = (0..TRAJ_DIM)
                .map(|i| a[i] + draw.lambda * (target[i] - a[i]) + sigma * draw.noise[j][i])
                .collect();
            xs.push(normalize(&row));
        }
        let x = tape.constant(Tensor::from_rows(&xs, TRAJ_DIM)?);
        let qs = tape.select_rows(q, &draw.rows)?;
        let base = tape.constant(Tensor::from_rows(&bases, TRAJ_DIM)?);
        let xh = self.denoise_var(tape, x, base, sigma, qs)?;
        let tn = normalize(&target);
        let tgt = Tensor::from_rows(&vec![tn; draw.rows.len()], TRAJ_DIM)?;
        let l1 = tape.l1_loss(xh, &tgt)?;
        Ok((l1, ce))
    }

    pub fn loss(&self, tape: &mut Tape, sample: &PlannerSample, draw: &TrainDraw) -> Result<Var> {
        let (l1, ce) = self.loss_parts(tape, sample, draw)?;
        let ce = tape.scale(ce, self.config.confidence_weight);
        tape.add(l1, ce)
    }

    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    /// Writes the parameters to `<stem>.bin` and anchors to `<stem>.anchors.json`.
    pub fn save(&self, stem: impl AsRef<Path>) -> Result<()> {
        let stem = stem.as_ref();
        self.params.save(stem.with_extension("bin"))?;
        self.anchors.save(stem.with_extension("anchors.json"))
    }

    pub fn load(stem: impl AsRef<Path>, config: PlannerConfig) -> Result<Self> {
        let stem = stem.as_ref();
        let anchors = AnchorSet::load(stem.with_extension("anchors.json"))?;
        let mut p = Self::new(config, anchors, 0)?;
        p.params.load_from(&ParamSet::load(stem.with_extension("bin"))?)?;
        p.trained = true;
        Ok(p)
    }
}

/// Minibatch Adam on L1 plus weighted confidence cross-entropy. Entry 0 of
/// the returned curve is measured before the first update.
pub fn train_planner(
    planner: &mut Planner,
    data: &[PlannerSample],
    cfg: &PlannerTrainConfig,
) -> Result<Vec<EpochLoss>> {
    if data.is_empty() {
        return Err(Error::invalid("planner training set is empty"));
    }
    let mut r = rng::derived(cfg.seed, 0x7A1E);
    let mut curve = Vec::with_capacity(cfg.epochs + 1);
    let mut eval_rng = rng::derived(cfg.seed, 0x7A1F);
    let (mut l1, mut ce) = (0.0, 0.0);
    for s in data {
        let draw = planner.draw(s, &mut eval_rng);
        let mut tape = Tape::new();
        let (a, b) = planner.loss_parts(&mut tape, s, &draw)?;
        l1 += tape.value(a).item();
        ce += tape.value(b).item();
    }
    let n = data.len() as f64;
    curve.push(EpochLoss {
        epoch: 0,
        l1: l1 / n,
        ce: ce / n,
    });

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut opt = Adam::new(cfg.lr);
    for epoch in 1..=cfg.epochs {
        opt.lr = crate::math::cosine_lr(cfg.lr, cfg.final_lr_ratio, epoch - 1, cfg.epochs);
        order.shuffle(&mut r);
        let (mut l1, mut ce) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch.max(1)) {
            planner.params.zero_grad();
            for &i in chunk {
                let draw = planner.draw(&data[i], &mut r);
                let mut tape = Tape::new();
                let (a, b) = planner.loss_parts(&mut tape, &data[i], &draw)?;
                let (va, vb) = (tape.value(a).item(), tape.value(b).item());
                if !(va.is_finite() && vb.is_finite()) {
                    return Err(Error::Diverged {
                        epoch,
                        loss: va + vb,
                    });
                }
                l1 += va;
                ce += vb;
                let b = tape.scale(b, planner.config.confidence_weight);
                let total = tape.add(a, b)?;
                let total = tape.scale(total, 1.0 / chunk.len() as f64);
                tape.backward(total, &mut planner.params)?;
            }
            opt.step(&mut planner.params);
        }
        log::debug!("planner epoch {epoch}: l1 {:.5} ce {:.5}", l1 / n, ce / n);
        curve.push(EpochLoss {
            epoch,
            l1: l1 / n,
            ce: ce / n,
        });
    }
    planner.trained = true;
    Ok(curve)
}

/// Mean absolute waypoint error (m, positions only) of the selected plans.
pub fn evaluate_l1(planner: &Planner, data: &[PlannerSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in data {
        let plan = planner.plan(&s.input)?;
        let t = plan.trajectory();
        let mut e = 0.0;
        for i in 0..HORIZON {
            let (p, q) = (t.xy(i), s.target.xy(i));
            e += (p[0] - q[0]).abs() + (p[1] - q[1]).abs();
        }
        total += e / (2 * HORIZON) as f64;
    }
    Ok(total / data.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scenario, rasterize_bev, GridConfig, LayoutKind};

    fn straight(speed: f64, lateral: f64) -> Trajectory {
        Trajectory::new(
            (1..=HORIZON)
                .map(|i| [speed * Trajectory::time(i - 1), lateral * i as f64 / HORIZON as f64, 0.0])
                .collect(),
        )
        .unwrap()
    }

    struct Oracle(Trajectory);
    impl CleanEstimator for Oracle {
        fn estimate(&self, _x: &[f64], _s: f64, _k: usize) -> Result<Vec<f64>> {
            Ok(self.0.flat())
        }
    }

    struct Identity;
    impl CleanEstimator for Identity {
        fn estimate(&self, x: &[f64], _s: f64, _k: usize) -> Result<Vec<f64>> {
            Ok(x.to_vec())
        }
    }

    #[test]
    fn schedule_shape() {
        let s = NoiseSchedule::default();
        assert_eq!(s.sigmas(), &[2.0, 1.0, 0.0]);
        assert_eq!(s.steps(), 2);
        assert!(NoiseSchedule::geometric(0, 2.0, 0.5).is_err());
        assert!(NoiseSchedule::geometric(2, 2.0, 1.0).is_err());
    }

    #[test]
    fn update_rule() {
        assert_eq!(denoise_update(&[4.0], &[2.0], 2.0, 1.0).unwrap(), vec![3.0]);
        assert_eq!(denoise_update(&[4.0], &[2.0], 2.0, 0.0).unwrap(), vec![2.0]);
        assert!(denoise_update(&[4.0], &[2.0], 1.0, 2.0).is_err());
        assert!(denoise_update(&[4.0], &[2.0], 1.0, 1.0).is_err());
        assert_eq!(denoise_update(&[4.0], &[2.0], 0.0, 0.0).unwrap(), vec![2.0]);
    }

    #[test]
    fn oracle_and_identity_estimators() {
        let anchor = straight(5.0, 0.0);
        let sched = NoiseSchedule::default();
        let noisy = perturb(&anchor, &sched, 0, 9).unwrap();
        assert_ne!(noisy, anchor);
        let out = run_chain(&Oracle(anchor.clone()), &noisy, &sched, 0).unwrap();
        assert_eq!(out, anchor);
        let fixed = denoise_step(&Identity, &noisy, 2.0, 1.0, 0).unwrap();
        for (a, b) in fixed.flat().iter().zip(noisy.flat()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(perturb(&anchor, &sched, 2, 0).is_err());
        assert_eq!(perturb(&anchor, &sched, 1, 3).unwrap(), perturb(&anchor, &sched, 1, 3).unwrap());
    }

    #[test]
    fn anchors_from_mix() {
        let mut trajs = Vec::new();
        for i in 0..10 {
            trajs.push(straight(4.0 + 0.1 * i as f64, 0.0));
            trajs.push(straight(4.0 + 0.1 * i as f64, 8.0));
        }
        let one = make_anchors(&trajs, 1, 0).unwrap();
        let mean_end = trajs.iter().map(|t| t.endpoint()[1]).sum::<f64>() / 20.0;
        assert!((one.get(0).endpoint()[1] - mean_end).abs() < 1e-9);
        let two = make_anchors(&trajs, 2, 0).unwrap();
        let ys: Vec<f64> = two.iter().map(|a| a.endpoint()[1]).collect();
        assert!((ys[0] - 4.0).abs() > 3.0 && (ys[1] - 4.0).abs() > 3.0 && (ys[0] - 4.0) * (ys[1] - 4.0) < 0.0);
        assert!(make_anchors(&trajs, 21, 0).is_err());
    }

    #[test]
    fn untrained_planner_returns_anchors() {
        let anchors = AnchorSet::new(vec![straight(3.0, 0.0), straight(6.0, 2.0)]).unwrap();
        let s = generate_scenario(LayoutKind::Straight, 1, 0.0).unwrap();
        let grid = rasterize_bev(&s, &GridConfig::default()).unwrap();
        let g = Guidance::new([20.0, 0.0], [1.0, 1.0]).unwrap();
        let p = Planner::new(PlannerConfig::default(), anchors.clone(), 0).unwrap();
        let input = PlanInput::new(&anchors, &grid, s.current().motion(), s.command.one_hot(), Some(&g)).unwrap();
        let plan = p.plan(&input).unwrap();
        for (c, a) in plan.candidates.iter().zip(anchors.iter()) {
            for (x, y) in c.flat().iter().zip(a.flat()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        assert_eq!(plan.trajectory().len(), HORIZON);
        let again = p.plan(&input).unwrap();
        assert_eq!(plan, again);
        let unguided = PlanInput::new(&anchors, &grid, [0.0; 4], [0.0; 4], None).unwrap();
        assert!(p.plan(&unguided).is_err());
    }
}
