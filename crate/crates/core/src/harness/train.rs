//! Expert-replay data generation and training of every learned component.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use super::{frame_seed, Arm, HarnessConfig};
use crate::diffusion::{make_anchors, train_planner, AnchorSet, EpochLoss, PlanInput, Planner, PlannerConfig, PlannerSample};
use crate::error::{Error, Result};
use crate::math::rng;
use crate::multirate::{train_predictor, Predictor, PredictorSample};
use crate::scene::{
    agent_features, generate_scenario_with, rasterize_bev_at, BevGrid, EgoState, Point, Pose, Scenario, Trajectory, DT,
};
use crate::scorer::score_goals;
use crate::uncertainty::{train_refiner, Guidance, NllKind, Refiner, RefinerConfig, RefinerInput, RefinerSample};
use crate::vocab::{build_vocabulary, GoalVocabulary};

/// Corrupts the expert endpoint, scores the vocabulary against it and
/// returns the chosen raw goal and whether the endpoint was corrupted.
/// `episode_seed` drives persistent corruption, `seed` everything else.
pub fn scorer_goal(
    cfg: &HarnessConfig,
    vocab: &GoalVocabulary,
    scenario: &Scenario,
    pose: &Pose,
    g_end: Point,
    episode_seed: u64,
    seed: u64,
) -> Result<(Point, bool)> {
    let corruption_seed = if cfg.corruption.persistent { episode_seed } else { seed };
    let mut r = rng::derived(corruption_seed, 0x5C0);
    let (target, corrupted) = cfg.corruption.apply(g_end, &mut r);
    let s = score_goals(vocab, &scenario.layout, pose, target, &cfg.score, rng::derive_seed(seed, 0xDAC))?;
    Ok((vocab.get(s.raw_index), corrupted))
}

/// One replayed expert frame with a jittered ego pose.
#[derive(Clone, Debug)]
pub struct ReplayFrame {
    pub scenario: usize,
    pub frame: usize,
    pub t: f64,
    pub pose: Pose,
    pub motion: [f64; 4],
    pub command: [f64; 4],
    /// Reference trajectory from `pose`, ego frame.
    pub gt: Trajectory,
    pub g_raw: Point,
    pub corrupted: bool,
}

impl ReplayFrame {
    pub fn grid(&self, cfg: &HarnessConfig, scenarios: &[Scenario]) -> Result<BevGrid> {
        rasterize_bev_at(&scenarios[self.scenario], &self.pose, self.t, &cfg.grid)
    }

    pub fn refiner_input(&self, cfg: &HarnessConfig, scenarios: &[Scenario], grid: &BevGrid) -> Result<RefinerInput> {
        let s = &scenarios[self.scenario];
        RefinerInput::new(
            grid,
            grid.pooled(cfg.refiner.pool)?,
            agent_features(s, &self.pose, self.t),
            self.g_raw,
            self.motion,
            self.command,
        )
    }
}

pub struct TrainingSet {
    pub scenarios: Vec<Scenario>,
    pub frames: Vec<ReplayFrame>,
    pub vocab: GoalVocabulary,
    pub anchors: AnchorSet,
}

fn training_scenarios(cfg: &HarnessConfig) -> Result<Vec<Scenario>> {
    let t = &cfg.train;
    let scen_cfg = crate::scene::ScenarioConfig {
        frames: cfg.scenario.frames.max(t.frames),
        ..cfg.scenario
    };
    (0..t.scenarios)
        .into_par_iter()
        .map(|i| {
            let seed = t.seed_offset + i as u64;
            let u: f64 = rng::derived(cfg.seed, seed).random();
            let d = t.difficulty_min + u * (t.difficulty_max - t.difficulty_min);
            generate_scenario_with(t.kinds[i % t.kinds.len()], seed, d, &scen_cfg)
        })
        .collect()
}

/// Episode and frame seeds of the scorer for replay draw `draw`.
fn scorer_seeds(cfg: &HarnessConfig, scenario: &Scenario, frame: usize, draw: u64) -> (u64, u64) {
    let base = rng::derive_seed(cfg.seed ^ 0x5C02, draw);
    (rng::derive_seed(base, scenario.seed), frame_seed(base, scenario.seed, frame))
}

fn replay_frame(cfg: &HarnessConfig, scenario: &Scenario, index: usize, frame: usize) -> ReplayFrame {
    let t = frame as f64 * DT;
    let expert = scenario.expert_pose(t);
    let mut r = rng::seeded(frame_seed(cfg.seed ^ 0x7E1, scenario.seed, frame));
    let [lat, head] = cfg.train.pose_jitter;
    let dy = if lat > 0.0 { r.random_range(-lat..=lat) } else { 0.0 };
    let dh = if head > 0.0 { r.random_range(-head..=head) } else { 0.0 };
    let p = expert.to_world([0.0, dy]);
    let pose = Pose::new(p[0], p[1], expert.heading + dh);
    let last = *scenario.expert_history(t).last().expect("history");
    let mut motion = EgoState { pose, ..last }.motion();
    let [dv, da] = cfg.train.motion_jitter;
    if dv > 0.0 {
        motion[0] += r.random_range(-dv..=dv);
    }
    if da > 0.0 {
        motion[2] += r.random_range(-da..=da);
    }
    ReplayFrame {
        scenario: index,
        frame,
        t,
        pose,
        motion,
        command: scenario.command.one_hot(),
        gt: scenario.reference_trajectory(&pose, t),
        g_raw: [0.0, 0.0],
        corrupted: false,
    }
}

/// Generates training scenarios and replay frames, builds the vocabulary
/// (unless given) and the anchors, and runs the scorer on every frame.
pub fn prepare_training(cfg: &HarnessConfig, vocab: Option<GoalVocabulary>) -> Result<TrainingSet> {
    let scenarios = training_scenarios(cfg)?;
    let mut frames: Vec<ReplayFrame> = scenarios
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, s)| (0..cfg.train.frames).map(move |f| replay_frame(cfg, s, i, f)))
        .collect();
    if frames.is_empty() {
        return Err(Error::invalid("training set has no frames"));
    }
    let vocab = match vocab {
        Some(v) => v,
        None => {
            let ends: Vec<Point> = frames.iter().map(|f| f.gt.endpoint()).collect();
            build_vocabulary(&ends, cfg.train.vocab_size, rng::derive_seed(cfg.seed, 0x70C))?
        }
    };
    let gts: Vec<Trajectory> = frames.iter().map(|f| f.gt.clone()).collect();
    let anchors = make_anchors(&gts, cfg.train.anchors, rng::derive_seed(cfg.seed, 0xA4C))?;
    frames.par_iter_mut().try_for_each(|f| -> Result<()> {
        let s = &scenarios[f.scenario];
        let (episode, seed) = scorer_seeds(cfg, s, f.frame, 0);
        (f.g_raw, f.corrupted) = scorer_goal(cfg, &vocab, s, &f.pose, f.gt.endpoint(), episode, seed)?;
        Ok(())
    })?;
    log::info!(
        "training set: {} scenarios, {} frames, {} corrupted",
        scenarios.len(),
        frames.len(),
        frames.iter().filter(|f| f.corrupted).count()
    );
    Ok(TrainingSet {
        scenarios,
        frames,
        vocab,
        anchors,
    })
}

fn refiner_config(cfg: &HarnessConfig, nll: NllKind) -> RefinerConfig {
    RefinerConfig { nll, ..cfg.refiner }
}

fn planner_config(cfg: &HarnessConfig, arm: Arm) -> PlannerConfig {
    PlannerConfig {
        guided: arm.guided(),
        ..cfg.planner
    }
}

fn tag(arm: Arm) -> u64 {
    0xD1F0 + arm as u64
}

/// Trains a refiner with the given likelihood on every replay frame. Each
/// frame contributes `refiner_draws` samples with independent scorer draws.
pub fn train_refiner_on(cfg: &HarnessConfig, data: &TrainingSet, nll: NllKind) -> Result<(Refiner, Vec<f64>)> {
    train_refiner_fold(cfg, data, nll, None)
}

/// Number of scenario folds used for cross-fitted guidance.
pub const FOLDS: usize = 2;

/// Fold of a training scenario.
pub fn fold_of(scenario: usize) -> usize {
    scenario % FOLDS
}

/// Like [`train_refiner_on`], leaving out the scenarios of fold `held_out`.
pub fn train_refiner_fold(
    cfg: &HarnessConfig,
    data: &TrainingSet,
    nll: NllKind,
    held_out: Option<usize>,
) -> Result<(Refiner, Vec<f64>)> {
    let draws = cfg.train.refiner_draws.max(1) as u64;
    let per_frame: Vec<Vec<RefinerSample>> = data
        .frames
        .par_iter()
        .filter(|f| held_out != Some(fold_of(f.scenario)))
        .map(|f| {
            let grid = f.grid(cfg, &data.scenarios)?;
            let s = &data.scenarios[f.scenario];
            let mut frame = f.clone();
            (0..draws)
                .map(|d| {
                    if d > 0 {
                        let (episode, seed) = scorer_seeds(cfg, s, f.frame, d);
                        (frame.g_raw, frame.corrupted) =
                            scorer_goal(cfg, &data.vocab, s, &f.pose, f.gt.endpoint(), episode, seed)?;
                    }
                    Ok(RefinerSample {
                        input: frame.refiner_input(cfg, &data.scenarios, &grid)?,
                        target: f.gt.endpoint(),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let samples: Vec<RefinerSample> = per_frame.into_iter().flatten().collect();
    let stream = match nll {
        NllKind::Laplace => 0x1A9,
        NllKind::Gaussian => 0x6A5,
    } + held_out.map_or(0, |k| 0x10 * (k as u64 + 1));
    let mut model = Refiner::new(refiner_config(cfg, nll), rng::derive_seed(cfg.seed, stream));
    let tcfg = crate::uncertainty::RefinerTrainConfig {
        seed: rng::derive_seed(cfg.seed, stream + 1) ^ cfg.train.refiner.seed,
        ..cfg.train.refiner
    };
    let curve = train_refiner(&mut model, &samples, &tcfg)?;
    Ok((model, curve))
}

/// Guidance each arm sees on a replay frame.
pub fn arm_guidance(
    cfg: &HarnessConfig,
    arm: Arm,
    refiner: Option<&Refiner>,
    input: &RefinerInput,
) -> Result<Option<Guidance>> {
    match arm {
        Arm::M0 => Ok(None),
        Arm::M1 => Guidance::new(input.g_raw, [cfg.raw_goal_scale; 2]).map(Some),
        Arm::M2 | Arm::M3 => refiner
            .ok_or_else(|| Error::invalid(format!("arm {arm} needs a refiner")))?
            .refine(input)
            .map(Some),
    }
}

/// Planner inputs and the guidance used, per arm, for every replay frame.
/// An arm given one refiner per fold refines each frame with the refiner
/// that held out that frame's fold; a single refiner serves every frame.
pub fn plan_inputs(
    cfg: &HarnessConfig,
    data: &TrainingSet,
    arms: &[(Arm, &[&Refiner])],
) -> Result<BTreeMap<Arm, Vec<(PlanInput, Option<Guidance>)>>> {
    for (arm, refiners) in arms {
        if refiners.len() > 1 && refiners.len() != FOLDS {
            return Err(Error::invalid(format!("arm {arm}: expected 1 or {FOLDS} refiners")));
        }
    }
    let rows: Vec<Vec<(PlanInput, Option<Guidance>)>> = data
        .frames
        .par_iter()
        .map(|f| {
            let grid = f.grid(cfg, &data.scenarios)?;
            let input = f.refiner_input(cfg, &data.scenarios, &grid)?;
            arms.iter()
                .map(|&(arm, refiners)| {
                    let refiner = match refiners.len() {
                        0 => None,
                        1 => Some(refiners[0]),
                        _ => Some(refiners[fold_of(f.scenario)]),
                    };
                    let g = arm_guidance(cfg, arm, refiner, &input)?;
                    let p = PlanInput::new(&data.anchors, &grid, f.motion, f.command, g.as_ref())?;
                    Ok((p, g))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut out: BTreeMap<Arm, Vec<_>> = arms.iter().map(|(a, _)| (*a, Vec::with_capacity(rows.len()))).collect();
    for row in rows {
        for ((arm, _), item) in arms.iter().zip(row) {
            out.get_mut(arm).expect("arm present").push(item);
        }
    }
    Ok(out)
}

/// Planner inputs whose guidance is the expert endpoint with scale `b`.
pub fn oracle_plan_inputs(cfg: &HarnessConfig, data: &TrainingSet, b: f64) -> Result<Vec<PlanInput>> {
    data.frames
        .par_iter()
        .map(|f| {
            let grid = f.grid(cfg, &data.scenarios)?;
            let g = Guidance::new(f.gt.endpoint(), [b; 2])?;
            PlanInput::new(&data.anchors, &grid, f.motion, f.command, Some(&g))
        })
        .collect()
}

pub fn train_planner_on(
    cfg: &HarnessConfig,
    data: &TrainingSet,
    arm: Arm,
    inputs: Vec<PlanInput>,
) -> Result<(Planner, Vec<EpochLoss>)> {
    let samples: Vec<PlannerSample> = inputs
        .into_iter()
        .zip(&data.frames)
        .map(|(input, f)| PlannerSample {
            input,
            target: f.gt.clone(),
        })
        .collect();
    let mut planner = Planner::new(
        planner_config(cfg, arm),
        data.anchors.clone(),
        rng::derive_seed(cfg.seed, tag(arm)),
    )?;
    let tcfg = crate::diffusion::PlannerTrainConfig {
        seed: rng::derive_seed(cfg.seed, tag(arm) + 0x100) ^ cfg.train.planner.seed,
        ..cfg.train.planner
    };
    let curve = train_planner(&mut planner, &samples, &tcfg)?;
    Ok((planner, curve))
}

/// Predictor samples from consecutive replay frames of one scenario: the
/// fresh refined guidance at frame `f` against the refined guidance at
/// `f + offset`, re-expressed in frame `f`.
pub fn predictor_samples(
    cfg: &HarnessConfig,
    data: &TrainingSet,
    guidance: &[Option<Guidance>],
) -> Result<Vec<PredictorSample>> {
    let mut out = Vec::new();
    for (i, f) in data.frames.iter().enumerate() {
        let Some(g) = guidance[i] else { continue };
        for offset in 1..=cfg.predictor.max_offset {
            let j = i + offset;
            let Some(later) = data.frames.get(j) else { break };
            if later.scenario != f.scenario || later.frame != f.frame + offset {
                break;
            }
            let Some(gl) = guidance[j] else { continue };
            out.push(PredictorSample {
                guidance: g,
                motion: f.motion,
                offset,
                target_mu: f.pose.to_local(later.pose.to_world(gl.mu)),
                target_b: gl.b,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::invalid(
            "no predictor samples (train.frames must exceed 1)",
        ));
    }
    Ok(out)
}

pub fn train_predictor_on(cfg: &HarnessConfig, samples: &[PredictorSample]) -> Result<(Predictor, Vec<f64>)> {
    let mut model = Predictor::new(cfg.predictor, rng::derive_seed(cfg.seed, 0x9E0));
    let tcfg = crate::multirate::PredictorTrainConfig {
        seed: rng::derive_seed(cfg.seed, 0x9E1) ^ cfg.train.predictor.seed,
        ..cfg.train.predictor
    };
    let curve = train_predictor(&mut model, samples, &tcfg)?;
    Ok((model, curve))
}

/// Every trained component the harness can use. Absent members mean the
/// corresponding arms or modes are skipped.
#[derive(Clone, Debug)]
pub struct Models {
    pub vocab: GoalVocabulary,
    pub refiner_laplace: Option<Refiner>,
    pub refiner_gaussian: Option<Refiner>,
    pub planners: BTreeMap<Arm, Planner>,
    pub predictor: Option<Predictor>,
}

const VOCAB_FILE: &str = "vocab.gvc";
const LAPLACE_FILE: &str = "refiner_laplace.bin";
const GAUSSIAN_FILE: &str = "refiner_gaussian.bin";
const PREDICTOR_FILE: &str = "predictor.bin";

fn planner_stem(dir: &Path, arm: Arm) -> std::path::PathBuf {
    dir.join(format!("planner_{arm}"))
}

impl Models {
    pub fn new(vocab: GoalVocabulary) -> Self {
        Self {
            vocab,
            refiner_laplace: None,
            refiner_gaussian: None,
            planners: BTreeMap::new(),
            predictor: None,
        }
    }

    /// Refiner an arm's high-level policy uses, if the arm has one.
    pub fn refiner_for(&self, arm: Arm) -> Option<&Refiner> {
        match arm {
            Arm::M2 => self.refiner_gaussian.as_ref(),
            Arm::M3 => self.refiner_laplace.as_ref(),
            _ => None,
        }
    }

    /// Why `arm` cannot run, if it cannot.
    pub fn missing(&self, arm: Arm) -> Option<String> {
        if !self.planners.contains_key(&arm) {
            return Some(format!("no planner checkpoint for {arm}"));
        }
        if matches!(arm, Arm::M2 | Arm::M3) && self.refiner_for(arm).is_none() {
            return Some(format!("no refiner checkpoint for {arm}"));
        }
        None
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.vocab.save(dir.join(VOCAB_FILE))?;
        if let Some(r) = &self.refiner_laplace {
            r.save(dir.join(LAPLACE_FILE))?;
        }
        if let Some(r) = &self.refiner_gaussian {
            r.save(dir.join(GAUSSIAN_FILE))?;
        }
        for (arm, p) in &self.planners {
            p.save(planner_stem(dir, *arm))?;
        }
        if let Some(p) = &self.predictor {
            p.save(dir.join(PREDICTOR_FILE))?;
        }
        Ok(())
    }

    /// Loads whatever is present in `dir`. The vocabulary is required; any
    /// other missing checkpoint is logged and left out.
    pub fn load(dir: impl AsRef<Path>, cfg: &HarnessConfig) -> Result<Self> {
        let dir = dir.as_ref();
        let vocab_path = dir.join(VOCAB_FILE);
        if !vocab_path.exists() {
            return Err(Error::Checkpoint(format!("{} not found", vocab_path.display())));
        }
        let mut m = Models::new(GoalVocabulary::load(vocab_path)?);
        let optional = |name: &str| {
            let p = dir.join(name);
            if p.exists() {
                Some(p)
            } else {
                log::warn!("checkpoint {} missing", p.display());
                None
            }
        };
        if let Some(p) = optional(LAPLACE_FILE) {
            m.refiner_laplace = Some(Refiner::load(p, refiner_config(cfg, NllKind::Laplace))?);
        }
        if let Some(p) = optional(GAUSSIAN_FILE) {
            m.refiner_gaussian = Some(Refiner::load(p, refiner_config(cfg, NllKind::Gaussian))?);
        }
        for arm in Arm::ALL {
            let stem = planner_stem(dir, arm);
            if optional(&format!("planner_{arm}.bin")).is_some() {
                m.planners.insert(arm, Planner::load(stem, planner_config(cfg, arm))?);
            }
        }
        if let Some(p) = optional(PREDICTOR_FILE) {
            m.predictor = Some(Predictor::load(p, cfg.predictor)?);
        }
        Ok(m)
    }
}

/// Loss curves of one training run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub refiner_laplace: Vec<f64>,
    pub refiner_gaussian: Vec<f64>,
    pub planners: BTreeMap<Arm, Vec<EpochLoss>>,
    pub predictor: Vec<f64>,
}

impl TrainReport {
    /// One CSV per trained component, named `loss_<component>.csv`.
    pub fn write_csvs(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let simple = |name: &str, curve: &[f64]| -> Result<()> {
            if curve.is_empty() {
                return Ok(());
            }
            let mut s = String::from("epoch,loss\n");
            for (e, l) in curve.iter().enumerate() {
                writeln!(s, "{e},{l}").expect("write to string");
            }
            std::fs::write(dir.join(format!("loss_{name}.csv")), s)?;
            Ok(())
        };
        simple("refiner_laplace", &self.refiner_laplace)?;
        simple("refiner_gaussian", &self.refiner_gaussian)?;
        simple("predictor", &self.predictor)?;
        for (arm, curve) in &self.planners {
            let mut s = String::from("epoch,l1,ce\n");
            for e in curve {
                writeln!(s, "{},{},{}", e.epoch, e.l1, e.ce).expect("write to string");
            }
            std::fs::write(dir.join(format!("loss_planner_{arm}.csv")), s)?;
        }
        Ok(())
    }
}

/// Which components a training run produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainTarget {
    Refiner,
    Denoiser,
    Predictor,
    All,
}

/// Trains `target` on top of the components already in `models` (or from
/// scratch when `models` is `None`).
pub fn train(cfg: &HarnessConfig, target: TrainTarget, models: Option<Models>) -> Result<(Models, TrainReport)> {
    let data = prepare_training(cfg, models.as_ref().map(|m| m.vocab.clone()))?;
    let mut models = models.unwrap_or_else(|| Models::new(data.vocab.clone()));
    let mut report = TrainReport::default();
    let want = |t: TrainTarget| target == t || target == TrainTarget::All;

    if want(TrainTarget::Refiner) {
        let (l, cl) = train_refiner_on(cfg, &data, NllKind::Laplace).map_err(|e| e.at_stage("train-refiner"))?;
        let (g, cg) = train_refiner_on(cfg, &data, NllKind::Gaussian).map_err(|e| e.at_stage("train-refiner"))?;
        log::info!("refiners trained: laplace {:.4} -> {:.4}", cl[0], cl[cl.len() - 1]);
        models.refiner_laplace = Some(l);
        models.refiner_gaussian = Some(g);
        report.refiner_laplace = cl;
        report.refiner_gaussian = cg;
    }

    let need_inputs = want(TrainTarget::Denoiser) || want(TrainTarget::Predictor);
    if need_inputs {
        let mut folds: BTreeMap<Arm, Vec<Refiner>> = BTreeMap::new();
        if cfg.train.cross_fit {
            for (arm, nll) in [(Arm::M2, NllKind::Gaussian), (Arm::M3, NllKind::Laplace)] {
                let wanted = want(TrainTarget::Denoiser) || arm == Arm::M3;
                if !wanted || models.refiner_for(arm).is_none() {
                    continue;
                }
                let trained = (0..FOLDS)
                    .map(|k| train_refiner_fold(cfg, &data, nll, Some(k)).map(|(r, _)| r))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| e.at_stage("train-refiner"))?;
                folds.insert(arm, trained);
            }
        }
        let mut held: Vec<(Arm, Vec<&Refiner>)> = Vec::new();
        for arm in Arm::ALL {
            let train_this = want(TrainTarget::Denoiser) || arm == Arm::M3;
            if !train_this {
                continue;
            }
            if matches!(arm, Arm::M2 | Arm::M3) && models.refiner_for(arm).is_none() {
                log::warn!("skipping {arm}: no refiner available");
                continue;
            }
            let refiners = match (folds.get(&arm), models.refiner_for(arm)) {
                (Some(f), _) => f.iter().collect(),
                (None, Some(r)) => vec![r],
                (None, None) => Vec::new(),
            };
            held.push((arm, refiners));
        }
        let arms: Vec<(Arm, &[&Refiner])> = held.iter().map(|(a, r)| (*a, r.as_slice())).collect();
        let mut inputs = plan_inputs(cfg, &data, &arms)?;
        if want(TrainTarget::Predictor) {
            match inputs.get(&Arm::M3) {
                Some(rows) => {
                    let g: Vec<Option<Guidance>> = rows.iter().map(|(_, g)| *g).collect();
                    let samples = predictor_samples(cfg, &data, &g)?;
                    let (p, curve) = train_predictor_on(cfg, &samples).map_err(|e| e.at_stage("train-predictor"))?;
                    models.predictor = Some(p);
                    report.predictor = curve;
                }
                None => log::warn!("predictor not trained: no laplace refiner"),
            }
        }
        if want(TrainTarget::Denoiser) {
            let jobs: Vec<(Arm, Vec<PlanInput>)> = std::mem::take(&mut inputs)
                .into_iter()
                .map(|(arm, rows)| (arm, rows.into_iter().map(|(p, _)| p).collect()))
                .collect();
            let trained: Vec<(Arm, Planner, Vec<EpochLoss>)> = jobs
                .into_par_iter()
                .map(|(arm, ins)| {
                    let (p, c) = train_planner_on(cfg, &data, arm, ins).map_err(|e| e.at_stage("train-denoiser"))?;
                    Ok((arm, p, c))
                })
                .collect::<Result<_>>()?;
            for (arm, p, c) in trained {
                models.planners.insert(arm, p);
                report.planners.insert(arm, c);
            }
        }
    }
    Ok((models, report))
}

pub fn train_all(cfg: &HarnessConfig) -> Result<(Models, TrainReport)> {
    train(cfg, TrainTarget::All, None)
}
