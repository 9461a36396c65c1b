//! Pipeline configuration, read from TOML. Every key has a default, so an
//! empty file is a valid configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::{PlannerConfig, PlannerTrainConfig, DEFAULT_ANCHORS};
use crate::error::{Error, Result};
use crate::metrics::MetricsConfig;
use crate::multirate::{Mode, PredictorConfig, PredictorTrainConfig, DEFAULT_TAU};
use crate::scene::{GridConfig, LayoutKind, ScenarioConfig};
use crate::scorer::{Corruption, ScoreConfig};
use crate::uncertainty::{RefinerConfig, RefinerTrainConfig};
use crate::vocab::DEFAULT_VOCAB_SIZE;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub seed: u64,
    /// Where checkpoints live; defaults to `<out>/checkpoints`.
    pub checkpoint_dir: Option<PathBuf>,
    /// Scale attached to the raw goal when it is injected without refinement.
    pub raw_goal_scale: f64,
    pub grid: GridConfig,
    pub scenario: ScenarioConfig,
    pub suite: SuiteConfig,
    pub train: TrainConfig,
    pub score: ScoreConfig,
    pub corruption: Corruption,
    pub refiner: RefinerConfig,
    pub planner: PlannerConfig,
    pub predictor: PredictorConfig,
    pub multirate: MultirateConfig,
    pub metrics: MetricsConfig,
    pub horizon: HorizonConfig,
    pub bench: BenchConfig,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            checkpoint_dir: None,
            raw_goal_scale: 1.0,
            grid: GridConfig::default(),
            scenario: ScenarioConfig::default(),
            suite: SuiteConfig::default(),
            train: TrainConfig::default(),
            score: ScoreConfig::default(),
            corruption: Corruption {
                outlier_prob: 0.3,
                jitter: 1.0,
                ..Corruption::default()
            },
            refiner: RefinerConfig::default(),
            planner: PlannerConfig::default(),
            predictor: PredictorConfig::default(),
            multirate: MultirateConfig::default(),
            metrics: MetricsConfig::default(),
            horizon: HorizonConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

/// Evaluation scenarios: `scenarios` seeds starting at `seed_offset`, kinds
/// assigned round-robin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub kinds: Vec<LayoutKind>,
    pub scenarios: usize,
    pub seed_offset: u64,
    pub difficulty: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            kinds: LayoutKind::ALL.to_vec(),
            scenarios: 40,
            seed_offset: 1_000_000,
            difficulty: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub kinds: Vec<LayoutKind>,
    pub scenarios: usize,
    pub seed_offset: u64,
    pub difficulty_min: f64,
    pub difficulty_max: f64,
    /// Expert-replay frames sampled per scenario.
    pub frames: usize,
    /// Lateral (m) and heading (rad) jitter applied to replayed ego poses.
    pub pose_jitter: [f64; 2],
    /// Uniform noise on the observed longitudinal speed (m/s) and
    /// acceleration (m/s²) of replayed frames; targets keep the expert speed.
    pub motion_jitter: [f64; 2],
    pub vocab_size: usize,
    pub anchors: usize,
    /// Independent scorer draws per replay frame in the refiner set.
    pub refiner_draws: usize,
    /// Planner and predictor see refiner outputs from a model that did not
    /// train on the frame's scenario.
    pub cross_fit: bool,
    pub refiner: RefinerTrainConfig,
    pub planner: PlannerTrainConfig,
    pub predictor: PredictorTrainConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            kinds: LayoutKind::ALL.to_vec(),
            scenarios: 240,
            seed_offset: 0,
            difficulty_min: 0.0,
            difficulty_max: 1.0,
            frames: 8,
            pose_jitter: [0.4, 0.04],
            motion_jitter: [1.0, 1.0],
            vocab_size: DEFAULT_VOCAB_SIZE,
            anchors: DEFAULT_ANCHORS,
            refiner_draws: 3,
            cross_fit: false,
            refiner: RefinerTrainConfig {
                epochs: 10,
                ..RefinerTrainConfig::default()
            },
            planner: PlannerTrainConfig {
                epochs: 20,
                ..PlannerTrainConfig::default()
            },
            predictor: PredictorTrainConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultirateConfig {
    pub mode: Mode,
    pub k: usize,
    pub tau: f64,
}

impl Default for MultirateConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Gamma3,
            k: 2,
            tau: DEFAULT_TAU,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HorizonConfig {
    pub kinds: Vec<LayoutKind>,
    pub scenarios: usize,
    pub seed_offset: u64,
    pub difficulty: f64,
    pub grid: Vec<usize>,
}

impl Default for HorizonConfig {
    fn default() -> Self {
        Self {
            kinds: vec![
                LayoutKind::Curve,
                LayoutKind::Fork,
                LayoutKind::ExitRamp,
                LayoutKind::Roundabout,
            ],
            scenarios: 120,
            seed_offset: 2_000_000,
            difficulty: 0.3,
            grid: vec![0, 3, 5, 10, 20],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub frames: usize,
    pub slow_stub_ms: f64,
    pub fast_stub_ms: f64,
    pub ks: Vec<usize>,
    /// Speedup measured on real hardware, printed next to the ideal ratio.
    pub reference_speedup: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            frames: 100,
            slow_stub_ms: 10.0,
            fast_stub_ms: 2.0,
            ks: vec![1, 2, 4],
            reference_speedup: 1.6,
        }
    }
}

impl HarnessConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: HarnessConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.metrics.weights.validate()?;
        self.grid.validate()?;
        if self.multirate.k < 1 {
            return bad("multirate.k must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.multirate.tau) {
            return bad(format!("multirate.tau {} outside [0, 1]", self.multirate.tau));
        }
        if self.suite.kinds.is_empty() || self.train.kinds.is_empty() || self.horizon.kinds.is_empty() {
            return bad("scenario kind lists must not be empty".into());
        }
        if !(self.raw_goal_scale > 0.0) {
            return bad("raw_goal_scale must be positive".into());
        }
        if self.train.difficulty_min > self.train.difficulty_max {
            return bad("train.difficulty_min exceeds difficulty_max".into());
        }
        if self.predictor.max_offset + 1 < self.multirate.k {
            return bad(format!(
                "predictor.max_offset {} cannot cover k = {}",
                self.predictor.max_offset, self.multirate.k
            ));
        }
        if !(self.score.temperature > 0.0) || !(self.score.sigma >= 0.0) {
            return bad("score.temperature must be > 0 and score.sigma >= 0".into());
        }
        Ok(())
    }

    pub fn checkpoints(&self, out: &Path) -> PathBuf {
        self.checkpoint_dir
            .clone()
            .unwrap_or_else(|| out.join("checkpoints"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(HarnessConfig::from_toml("").unwrap(), HarnessConfig::default());
    }

    #[test]
    fn round_trip_and_overrides() {
        let cfg = HarnessConfig::default();
        let back = HarnessConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        let c = HarnessConfig::from_toml("seed = 7\n[multirate]\nmode = \"gamma2\"\nk = 2\n[score]\ntemperature = 2.0\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.multirate.mode, Mode::Gamma2);
        assert_eq!(c.score.temperature, 2.0);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(HarnessConfig::from_toml("[multirate]\nk = 0\n").is_err());
        assert!(HarnessConfig::from_toml("unknown_key = 1\n").is_err());
        assert!(HarnessConfig::from_toml("[metrics.weights]\nep = 0.9\n").is_err());
    }
}
