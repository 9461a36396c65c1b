//! Component (M0 to M3), extension-mode (Γ0 to Γ4) and horizon ablations.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use super::rollout::{rollout, RolloutContext, RolloutRecord, ROLLOUT_CSV_HEADER};
use super::train::Models;
use super::{frame_seed, scenario_set, Arm, HarnessConfig};
use crate::contract::{compose, DiffusionPolicy, HighLevelPolicy, LowLevelPolicy, Observation, RawGoalPolicy, RefinerPolicy};
use crate::error::{Error, Result};
use crate::metrics::{self, mean_scores, FrameScores};
use crate::multirate::{extend, ExtensionContext, FreshGuidance, Mode};
use crate::scene::{agent_features, rasterize_bev_at, LayoutKind, Scenario, ScenarioConfig, DT};
use crate::scorer;

/// One-sided paired sign test of `a > b`; ties are dropped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignTest {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// `P(X >= wins)` for `X ~ Binomial(wins + losses, 1/2)`.
    pub p_value: f64,
}

pub fn sign_test(a: &[f64], b: &[f64]) -> Result<SignTest> {
    if a.len() != b.len() {
        return Err(Error::invalid("sign test needs paired samples"));
    }
    let (mut wins, mut losses, mut ties) = (0, 0, 0);
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Greater) => wins += 1,
            Some(std::cmp::Ordering::Less) => losses += 1,
            _ => ties += 1,
        }
    }
    let n = wins + losses;
    let ln_fact = |m: usize| (1..=m).map(|i| (i as f64).ln()).sum::<f64>();
    let p_value = (wins..=n)
        .map(|i| (ln_fact(n) - ln_fact(i) - ln_fact(n - i) - n as f64 * std::f64::consts::LN_2).exp())
        .sum::<f64>()
        .min(1.0);
    Ok(SignTest {
        wins,
        losses,
        ties,
        p_value,
    })
}

/// Aggregate of one arm over the paired scenario suite.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmRow {
    pub label: String,
    /// `(seed, kind, mean scores over the rollout)` in suite order.
    pub per_seed: Vec<(u64, LayoutKind, FrameScores)>,
    pub mean: FrameScores,
    pub fresh: usize,
    pub extended: usize,
}

impl ArmRow {
    pub fn composites(&self) -> Vec<f64> {
        self.per_seed.iter().map(|(_, _, s)| s.composite).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    /// `m` or `gamma`.
    pub suite: &'static str,
    pub rows: Vec<ArmRow>,
    /// Per-frame scores of every rollout, see [`ROLLOUT_CSV_HEADER`].
    pub frames_csv: String,
}

const SCORE_COLUMNS: &str = "nc,dac,ttc,ep,comfort,ec,composite";

fn score_fields(s: &FrameScores) -> String {
    format!("{},{},{},{},{},{},{}", s.nc, s.dac, s.ttc, s.ep, s.comfort, s.ec, s.composite)
}

impl AblationTable {
    pub fn row(&self, label: &str) -> Option<&ArmRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// `arm,scenarios,fresh,extended,<scores>`.
    pub fn summary_csv(&self) -> String {
        let mut s = format!("arm,scenarios,fresh,extended,{SCORE_COLUMNS}\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{}",
                r.label,
                r.per_seed.len(),
                r.fresh,
                r.extended,
                score_fields(&r.mean)
            )
            .expect("write to string");
        }
        s
    }

    /// `arm,seed,kind,<scores>`.
    pub fn per_seed_csv(&self) -> String {
        let mut s = format!("arm,seed,kind,{SCORE_COLUMNS}\n");
        for r in &self.rows {
            for (seed, kind, sc) in &r.per_seed {
                writeln!(s, "{},{seed},{},{}", r.label, kind.as_str(), score_fields(sc)).expect("write to string");
            }
        }
        s
    }

    /// Means per arm plus paired sign tests between consecutive arms.
    pub fn summary_text(&self) -> String {
        let mut s = format!("{} ablation over {} paired scenarios\n", self.suite, self.rows.first().map_or(0, |r| r.per_seed.len()));
        for r in &self.rows {
            writeln!(
                s,
                "  {:<7} composite {:.4}  nc {:.3}  dac {:.3}  ttc {:.3}  ep {:.3}  comfort {:.3}  ec {:.3}",
                r.label, r.mean.composite, r.mean.nc, r.mean.dac, r.mean.ttc, r.mean.ep, r.mean.comfort, r.mean.ec
            )
            .expect("write to string");
        }
        for pair in self.rows.windows(2) {
            if let Ok(t) = sign_test(&pair[1].composites(), &pair[0].composites()) {
                writeln!(
                    s,
                    "  sign test {} > {}: {} wins, {} losses, {} ties, p = {:.4}",
                    pair[1].label, pair[0].label, t.wins, t.losses, t.ties, t.p_value
                )
                .expect("write to string");
            }
        }
        s
    }

    /// Writes `ablation_<suite>.csv`, `ablation_<suite>_per_seed.csv`,
    /// `rollouts_<suite>.csv` and `ablation_<suite>_summary.txt`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("ablation_{}.csv", self.suite)), self.summary_csv())?;
        std::fs::write(dir.join(format!("ablation_{}_per_seed.csv", self.suite)), self.per_seed_csv())?;
        std::fs::write(dir.join(format!("rollouts_{}.csv", self.suite)), &self.frames_csv)?;
        std::fs::write(dir.join(format!("ablation_{}_summary.txt", self.suite)), self.summary_text())?;
        Ok(())
    }
}

/// The paired evaluation scenarios of the ablation suites.
pub fn suite_scenarios(cfg: &HarnessConfig) -> Result<Vec<Scenario>> {
    scenario_set(
        &cfg.suite.kinds,
        cfg.suite.scenarios,
        cfg.suite.seed_offset,
        cfg.suite.difficulty,
        &cfg.scenario,
    )
}

fn run_arm(
    ctx: &RolloutContext<'_>,
    high: Option<&dyn HighLevelPolicy>,
    low: &DiffusionPolicy<'_>,
    scenarios: &[Scenario],
    label: &str,
    frames_csv: &mut String,
) -> Result<ArmRow> {
    let composed = compose(high, low)?;
    let records: Vec<RolloutRecord> = scenarios
        .par_iter()
        .map(|s| rollout(ctx, &composed, s))
        .collect::<Result<_>>()?;
    let per_seed: Vec<_> = scenarios
        .iter()
        .zip(&records)
        .map(|(s, r)| (s.seed, s.kind, r.mean_scores()))
        .collect();
    for r in &records {
        r.write_csv_rows(&format!("{label}-{}", r.scenario_seed), frames_csv);
    }
    let means: Vec<FrameScores> = per_seed.iter().map(|(_, _, s)| *s).collect();
    Ok(ArmRow {
        label: label.to_string(),
        mean: mean_scores(&means),
        fresh: records.iter().map(|r| r.fresh_count()).sum(),
        extended: records.iter().map(|r| r.extended_count()).sum(),
        per_seed,
    })
}

/// Rolls `arm` out on `scenarios` under `mode` (period `multirate.k`).
pub fn arm_rollouts(
    cfg: &HarnessConfig,
    models: &Models,
    arm: Arm,
    mode: Mode,
    scenarios: &[Scenario],
) -> Result<Vec<RolloutRecord>> {
    if let Some(why) = models.missing(arm) {
        return Err(Error::Checkpoint(format!("arm {arm} cannot run: {why}")));
    }
    if arm != Arm::M0 && mode.needs_predictor() && models.predictor.is_none() {
        return Err(Error::Checkpoint(format!("{mode} needs a predictor checkpoint")));
    }
    let ctx = RolloutContext {
        cfg,
        vocab: &models.vocab,
        mode,
        k: mode.period(cfg.multirate.k),
        predictor: models.predictor.as_ref(),
    };
    let low = DiffusionPolicy {
        planner: &models.planners[&arm],
    };
    let raw = RawGoalPolicy {
        b: [cfg.raw_goal_scale; 2],
    };
    let refined = models.refiner_for(arm).map(|r| RefinerPolicy { refiner: r });
    let high: Option<&dyn HighLevelPolicy> = match arm {
        Arm::M0 => None,
        Arm::M1 => Some(&raw),
        _ => refined.as_ref().map(|r| r as &dyn HighLevelPolicy),
    };
    let composed = compose(high, &low)?;
    scenarios.par_iter().map(|s| rollout(&ctx, &composed, s)).collect()
}

/// M0 to M3 with fresh guidance on every frame. Arms without checkpoints
/// are skipped with a warning.
pub fn run_m_suite(cfg: &HarnessConfig, models: &Models) -> Result<AblationTable> {
    let scenarios = suite_scenarios(cfg)?;
    let ctx = RolloutContext {
        cfg,
        vocab: &models.vocab,
        mode: Mode::Gamma0,
        k: 1,
        predictor: None,
    };
    let raw = RawGoalPolicy {
        b: [cfg.raw_goal_scale; 2],
    };
    let mut rows = Vec::new();
    let mut frames_csv = format!("{ROLLOUT_CSV_HEADER}\n");
    for arm in Arm::ALL {
        if let Some(why) = models.missing(arm) {
            log::warn!("skipping arm {arm}: {why}");
            continue;
        }
        let low = DiffusionPolicy {
            planner: &models.planners[&arm],
        };
        let refined = models.refiner_for(arm).map(|r| RefinerPolicy { refiner: r });
        let high: Option<&dyn HighLevelPolicy> = match arm {
            Arm::M0 => None,
            Arm::M1 => Some(&raw),
            _ => refined.as_ref().map(|r| r as &dyn HighLevelPolicy),
        };
        log::info!("running arm {arm} on {} scenarios", scenarios.len());
        rows.push(run_arm(&ctx, high, &low, &scenarios, arm.as_str(), &mut frames_csv)?);
    }
    if rows.is_empty() {
        return Err(Error::Checkpoint("no arm of the m suite could run".into()));
    }
    Ok(AblationTable {
        suite: "m",
        rows,
        frames_csv,
    })
}

/// Γ0 (slow system every frame) against Γ1 to Γ4 at `multirate.k`, all
/// with the M3 models.
pub fn run_gamma_suite(cfg: &HarnessConfig, models: &Models) -> Result<AblationTable> {
    if let Some(why) = models.missing(Arm::M3) {
        return Err(Error::Checkpoint(format!("gamma suite needs the m3 models: {why}")));
    }
    let scenarios = suite_scenarios(cfg)?;
    let low = DiffusionPolicy {
        planner: &models.planners[&Arm::M3],
    };
    let high = RefinerPolicy {
        refiner: models.refiner_laplace.as_ref().expect("checked above"),
    };
    let mut rows = Vec::new();
    let mut frames_csv = format!("{ROLLOUT_CSV_HEADER}\n");
    for mode in Mode::ALL {
        if mode.needs_predictor() && models.predictor.is_none() {
            log::warn!("skipping {mode}: no predictor checkpoint");
            continue;
        }
        let ctx = RolloutContext {
            cfg,
            vocab: &models.vocab,
            mode,
            k: mode.period(cfg.multirate.k),
            predictor: models.predictor.as_ref(),
        };
        log::info!("running {mode} on {} scenarios", scenarios.len());
        rows.push(run_arm(&ctx, Some(&high), &low, &scenarios, mode.as_str(), &mut frames_csv)?);
    }
    Ok(AblationTable {
        suite: "gamma",
        rows,
        frames_csv,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct HorizonRow {
    /// `l-ke` or `dac-ke`.
    pub method: &'static str,
    pub n: usize,
    pub scenarios: usize,
    /// Mean drivable-area sub-score of the plans made with the extended goal.
    pub dac: f64,
    /// Fraction of extended goals that lie on the road.
    pub goal_dac: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HorizonTable {
    pub rows: Vec<HorizonRow>,
}

pub const HORIZON_METHODS: [&str; 2] = ["l-ke", "dac-ke"];

impl HorizonTable {
    pub fn series(&self, method: &str) -> Vec<&HorizonRow> {
        self.rows.iter().filter(|r| r.method == method).collect()
    }

    pub fn non_increasing(&self, method: &str) -> bool {
        self.series(method).windows(2).all(|w| w[1].dac <= w[0].dac)
    }

    /// DAC-KE scores at least L-KE at every horizon.
    pub fn dac_ke_dominates(&self) -> bool {
        self.series("l-ke")
            .iter()
            .zip(self.series("dac-ke"))
            .all(|(l, d)| d.dac >= l.dac)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,n,scenarios,dac,goal_dac\n");
        for r in &self.rows {
            writeln!(s, "{},{},{},{},{}", r.method, r.n, r.scenarios, r.dac, r.goal_dac).expect("write to string");
        }
        s
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::from("horizon sweep (mean plan dac)\n  n    ");
        let l = self.series("l-ke");
        for r in &l {
            write!(s, "{:>8}", r.n).expect("write to string");
        }
        for m in HORIZON_METHODS {
            write!(s, "\n  {m:<6}").expect("write to string");
            for r in self.series(m) {
                write!(s, "{:>8.3}", r.dac).expect("write to string");
            }
        }
        writeln!(
            s,
            "\n  non-increasing: l-ke {}, dac-ke {}; dac-ke >= l-ke: {}",
            self.non_increasing("l-ke"),
            self.non_increasing("dac-ke"),
            self.dac_ke_dominates()
        )
        .expect("write to string");
        s
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("ablation_horizon.csv"), self.to_csv())?;
        std::fs::write(dir.join("ablation_horizon_summary.txt"), self.summary_text())?;
        Ok(())
    }
}

/// Per scenario: `(plan dac, goal on road)` for each method and horizon.
type HorizonScores = Vec<[(f64, f64); 2]>;

struct Snapshot {
    pose: crate::scene::Pose,
    grid: crate::scene::BevGrid,
    tokens: crate::math::Tensor,
    agents: crate::math::Tensor,
    motion: [f64; 4],
}

impl Snapshot {
    /// Expert state on frame `n`.
    fn at(cfg: &HarnessConfig, s: &Scenario, n: usize) -> Result<Self> {
        let t = n as f64 * DT;
        let pose = s.expert_pose(t);
        let grid = rasterize_bev_at(s, &pose, t, &cfg.grid)?;
        let motion = crate::scene::EgoState {
            pose,
            ..*s.expert_history(t).last().expect("history")
        }
        .motion();
        Ok(Self {
            tokens: grid.pooled(cfg.refiner.pool)?,
            agents: agent_features(s, &pose, t),
            pose,
            grid,
            motion,
        })
    }

    fn observation<'a>(&'a self, s: &Scenario, frame: usize, raw_goal: Option<crate::scene::Point>) -> Observation<'a> {
        Observation {
            frame,
            grid: &self.grid,
            tokens: &self.tokens,
            agents: &self.agents,
            motion: self.motion,
            command: s.command.one_hot(),
            raw_goal,
        }
    }
}

fn horizon_scenario(cfg: &HarnessConfig, models: &Models, s: &Scenario) -> Result<HorizonScores> {
    let low = DiffusionPolicy {
        planner: &models.planners[&Arm::M3],
    };
    let high = RefinerPolicy {
        refiner: models.refiner_laplace.as_ref().expect("checked by caller"),
    };
    let snap0 = Snapshot::at(cfg, s, 0)?;
    let gt0 = s.reference_trajectory(&snap0.pose, 0.0);
    let seed0 = frame_seed(cfg.seed ^ 0x40, s.seed, 0);
    let scores = scorer::score_goals(&models.vocab, &s.layout, &snap0.pose, gt0.endpoint(), &cfg.score, seed0)?;
    let obs0 = snap0.observation(s, 0, Some(models.vocab.get(scores.raw_index)));
    let g0 = high.guidance(&obs0)?;
    let plan0 = low.plan(&obs0, Some(&g0))?;
    let fresh = FreshGuidance {
        frame: 0,
        pose: snap0.pose,
        guidance: g0,
        motion: snap0.motion,
        plan: Some(plan0.trajectory().clone()),
    };

    let mut out = Vec::with_capacity(cfg.horizon.grid.len());
    for &n in &cfg.horizon.grid {
        let snap = Snapshot::at(cfg, s, n)?;
        let dac = scorer::score_dac(
            &models.vocab,
            &s.layout,
            &snap.pose,
            cfg.score.sigma,
            frame_seed(cfg.seed ^ 0x41, s.seed, 0),
        )?;
        let mut pair = [(0.0, 0.0); 2];
        for (slot, mode) in [Mode::Gamma2, Mode::Gamma3].into_iter().enumerate() {
            let g = if n == 0 {
                g0
            } else {
                extend(
                    mode,
                    &ExtensionContext {
                        fresh: &fresh,
                        offset: n,
                        pose: snap.pose,
                        vocab: &models.vocab,
                        dac: Some(&dac),
                        tau: cfg.multirate.tau,
                        predictor: None,
                    },
                )?
            };
            let plan = low.plan(&snap.observation(s, n, None), Some(&g))?;
            let plan_dac = metrics::score_dac(plan.trajectory(), &s.layout, &snap.pose);
            let on_road = if s.dac_truth(snap.pose.to_world(g.mu)) { 1.0 } else { 0.0 };
            pair[slot] = (plan_dac, on_road);
        }
        out.push(pair);
    }
    Ok(out)
}

/// Open-loop expert replay: fresh guidance on frame 0, extended `n` frames
/// ahead with L-KE and DAC-KE, planned from the expert pose at frame `n`.
pub fn run_horizon_sweep(cfg: &HarnessConfig, models: &Models) -> Result<HorizonTable> {
    if let Some(why) = models.missing(Arm::M3) {
        return Err(Error::Checkpoint(format!("horizon sweep needs the m3 models: {why}")));
    }
    let h = &cfg.horizon;
    let max_n = h.grid.iter().copied().max().unwrap_or(0);
    let scen_cfg = ScenarioConfig {
        frames: max_n + 1,
        ..cfg.scenario
    };
    let scenarios = scenario_set(&h.kinds, h.scenarios, h.seed_offset, h.difficulty, &scen_cfg)?;
    let per: Vec<HorizonScores> = scenarios
        .par_iter()
        .map(|s| horizon_scenario(cfg, models, s))
        .collect::<Result<_>>()?;
    let count = per.len().max(1) as f64;
    let mut rows = Vec::new();
    for (slot, method) in HORIZON_METHODS.into_iter().enumerate() {
        for (i, &n) in h.grid.iter().enumerate() {
            let dac = per.iter().map(|p| p[i][slot].0).sum::<f64>() / count;
            let goal_dac = per.iter().map(|p| p[i][slot].1).sum::<f64>() / count;
            rows.push(HorizonRow {
                method,
                n,
                scenarios: per.len(),
                dac,
                goal_dac,
            });
        }
    }
    Ok(HorizonTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_test_by_hand() {
        let t = sign_test(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!((t.wins, t.losses, t.ties), (3, 0, 0));
        assert!((t.p_value - 0.125).abs() < 1e-12);
        let t = sign_test(&[1.0, 0.0, 5.0, 5.0], &[0.0, 1.0, 5.0, 4.0]).unwrap();
        assert_eq!((t.wins, t.losses, t.ties), (2, 1, 1));
        assert!((t.p_value - 0.5).abs() < 1e-12);
        assert!(sign_test(&[1.0], &[]).is_err());
    }

    #[test]
    fn horizon_checks() {
        let row = |method, n, dac| HorizonRow {
            method,
            n,
            scenarios: 1,
            dac,
            goal_dac: dac,
        };
        let t = HorizonTable {
            rows: vec![row("l-ke", 0, 1.0), row("l-ke", 5, 0.5), row("dac-ke", 0, 1.0), row("dac-ke", 5, 0.7)],
        };
        assert!(t.non_increasing("l-ke") && t.non_increasing("dac-ke") && t.dac_ke_dominates());
        assert!(t.to_csv().starts_with("method,n,scenarios,dac,goal_dac\nl-ke,0,1,1,1\n"));
    }
}
