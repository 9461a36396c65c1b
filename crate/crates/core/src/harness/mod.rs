//! Closed-loop rollouts, ablation suites, training orchestration and the
//! latency benchmark.

pub mod ablation;
pub mod bench;
pub mod config;
pub mod rollout;
pub mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::rng;
use crate::scene::{generate_scenario_with, LayoutKind, Scenario, ScenarioConfig};

pub use ablation::{
    arm_rollouts, run_gamma_suite, suite_scenarios, run_horizon_sweep, run_m_suite, sign_test, AblationTable, HorizonRow, HorizonTable,
    SignTest,
};
pub use bench::{bench_real, bench_stub, busy_wait, BenchReport, BenchRow, RealLatency};
pub use config::HarnessConfig;
pub use rollout::{rollout, FrameRecord, Latency, RolloutContext, RolloutRecord, ROLLOUT_CSV_HEADER};
pub use train::{train, train_all, Models, TrainReport, TrainTarget};

/// Component ablation arms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    /// Planner alone, no goal.
    M0,
    /// Raw scorer goal injected with a constant scale.
    M1,
    /// Refined goal with a Gaussian scale.
    M2,
    /// Refined goal with a Laplace scale.
    M3,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::M0, Arm::M1, Arm::M2, Arm::M3];

    pub fn as_str(&self) -> &'static str {
        match self {
            Arm::M0 => "m0",
            Arm::M1 => "m1",
            Arm::M2 => "m2",
            Arm::M3 => "m3",
        }
    }

    pub fn guided(&self) -> bool {
        *self != Arm::M0
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::invalid(format!("unknown arm '{s}' (expected m0..m3)")))
    }
}

/// Seed for per-frame randomness of one scenario.
pub fn frame_seed(base: u64, scenario_seed: u64, frame: usize) -> u64 {
    rng::derive_seed(rng::derive_seed(base, scenario_seed), frame as u64)
}

/// `count` scenarios with seeds `offset..offset + count`, kinds round-robin.
pub fn scenario_set(
    kinds: &[LayoutKind],
    count: usize,
    offset: u64,
    difficulty: f64,
    cfg: &ScenarioConfig,
) -> Result<Vec<Scenario>> {
    if kinds.is_empty() {
        return Err(Error::invalid("no scenario kinds given"));
    }
    use rayon::prelude::*;
    (0..count)
        .into_par_iter()
        .map(|i| generate_scenario_with(kinds[i % kinds.len()], offset + i as u64, difficulty, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arm_names_round_trip() {
        for a in Arm::ALL {
            assert_eq!(a.as_str().parse::<Arm>().unwrap(), a);
        }
        assert_eq!("M3".parse::<Arm>().unwrap(), Arm::M3);
        assert!("m4".parse::<Arm>().is_err());
    }

    #[test]
    fn scenario_set_is_round_robin() {
        let s = scenario_set(&[LayoutKind::Straight, LayoutKind::Fork], 4, 10, 0.2, &ScenarioConfig::default()).unwrap();
        let kinds: Vec<_> = s.iter().map(|x| x.kind).collect();
        assert_eq!(kinds, [LayoutKind::Straight, LayoutKind::Fork, LayoutKind::Straight, LayoutKind::Fork]);
        assert_eq!(s[3].seed, 13);
    }
}
