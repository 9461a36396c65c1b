//! Multi-rate amortization benchmark with stub modules, plus measured
//! per-module latency of the real pipeline.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use super::rollout::{rollout, RolloutContext};
use super::train::Models;
use super::{scenario_set, Arm, HarnessConfig};
use crate::contract::{compose, DiffusionPolicy, RefinerPolicy};
use crate::error::{Error, Result};
use crate::multirate::{schedule, slow_invocations, Schedule};

/// Occupies the calling thread for `ms` milliseconds: sleeps for most of
/// it and spins for the last millisecond.
pub fn busy_wait(ms: f64) {
    let start = Instant::now();
    let total = Duration::from_secs_f64(ms.max(0.0) / 1e3);
    if total > Duration::from_millis(2) {
        std::thread::sleep(total - Duration::from_millis(1));
    }
    while start.elapsed() < total {
        std::hint::spin_loop();
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchRow {
    pub k: usize,
    pub frames: usize,
    pub slow_invocations: usize,
    /// `ceil(frames / k)`.
    pub expected_invocations: usize,
    pub amortized_ms: f64,
    /// `fast + slow / k`.
    pub predicted_ms: f64,
    pub rel_error: f64,
    /// Slow-system invocations at `k = 1` over those at this `k`.
    pub rate_ratio: f64,
}

/// Runs `frames` stub frames per period in `ks`.
pub fn bench_stub(frames: usize, slow_ms: f64, fast_ms: f64, ks: &[usize]) -> Result<Vec<BenchRow>> {
    if !(slow_ms >= 0.0 && fast_ms >= 0.0) {
        return Err(Error::invalid("stub latencies must be >= 0"));
    }
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        if frames < k || k == 0 {
            return Err(Error::invalid(format!("bench needs frames >= k >= 1 (frames {frames}, k {k})")));
        }
        let mut invocations = 0;
        let start = Instant::now();
        for f in 0..frames {
            if schedule(f, k)? == Schedule::RunSlow {
                busy_wait(slow_ms);
                invocations += 1;
            }
            busy_wait(fast_ms);
        }
        let amortized_ms = start.elapsed().as_secs_f64() * 1e3 / frames as f64;
        let predicted_ms = fast_ms + slow_ms / k as f64;
        rows.push(BenchRow {
            k,
            frames,
            slow_invocations: invocations,
            expected_invocations: slow_invocations(frames, k)?,
            amortized_ms,
            predicted_ms,
            rel_error: (amortized_ms - predicted_ms).abs() / predicted_ms.max(f64::MIN_POSITIVE),
            rate_ratio: frames as f64 / invocations as f64,
        });
    }
    Ok(rows)
}

/// Mean wall-clock milliseconds per module over real rollouts.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RealLatency {
    pub frames: usize,
    pub raster_ms: f64,
    /// Scorer plus refiner on fresh frames.
    pub fresh_ms: f64,
    /// Guidance extension on skipped frames.
    pub extension_ms: f64,
    pub plan_ms: f64,
}

/// Times the M3 pipeline under the configured multi-rate mode.
pub fn bench_real(cfg: &HarnessConfig, models: &Models, scenarios: usize) -> Result<RealLatency> {
    if let Some(why) = models.missing(Arm::M3) {
        return Err(Error::Checkpoint(format!("real latency needs the m3 models: {why}")));
    }
    let low = DiffusionPolicy {
        planner: &models.planners[&Arm::M3],
    };
    let high = RefinerPolicy {
        refiner: models.refiner_laplace.as_ref().expect("checked above"),
    };
    let composed = compose(Some(&high), &low)?;
    let mode = cfg.multirate.mode;
    if mode.needs_predictor() && models.predictor.is_none() {
        return Err(Error::Checkpoint(format!("{mode} needs a predictor checkpoint")));
    }
    let ctx = RolloutContext {
        cfg,
        vocab: &models.vocab,
        mode,
        k: mode.period(cfg.multirate.k),
        predictor: models.predictor.as_ref(),
    };
    let set = scenario_set(&cfg.suite.kinds, scenarios, cfg.suite.seed_offset, cfg.suite.difficulty, &cfg.scenario)?;
    let mut out = RealLatency::default();
    let (mut fresh, mut ext) = (0usize, 0usize);
    for s in &set {
        for f in rollout(&ctx, &composed, s)?.frames {
            out.frames += 1;
            out.raster_ms += f.latency.raster_ms;
            out.plan_ms += f.latency.plan_ms;
            if f.fresh {
                fresh += 1;
                out.fresh_ms += f.latency.slow_ms;
            } else {
                ext += 1;
                out.extension_ms += f.latency.slow_ms;
            }
        }
    }
    let n = out.frames.max(1) as f64;
    out.raster_ms /= n;
    out.plan_ms /= n;
    out.fresh_ms /= fresh.max(1) as f64;
    out.extension_ms /= ext.max(1) as f64;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub slow_ms: f64,
    pub fast_ms: f64,
    pub rows: Vec<BenchRow>,
    /// Ideal slow-system speedup at `k = 2`.
    pub ideal_speedup: f64,
    /// Speedup measured on real hardware, printed alongside.
    pub reference_speedup: f64,
    pub real: Option<RealLatency>,
}

impl BenchReport {
    pub fn new(cfg: &HarnessConfig, rows: Vec<BenchRow>, real: Option<RealLatency>) -> Result<Self> {
        let n = cfg.bench.frames;
        let ideal_speedup = slow_invocations(n, 1)? as f64 / slow_invocations(n, 2)? as f64;
        Ok(Self {
            slow_ms: cfg.bench.slow_stub_ms,
            fast_ms: cfg.bench.fast_stub_ms,
            rows,
            ideal_speedup,
            reference_speedup: cfg.bench.reference_speedup,
            real,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("k,frames,slow_invocations,expected_invocations,amortized_ms,predicted_ms,rel_error,rate_ratio\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.k, r.frames, r.slow_invocations, r.expected_invocations, r.amortized_ms, r.predicted_ms, r.rel_error, r.rate_ratio
            )
            .expect("write to string");
        }
        s
    }

    pub fn summary_text(&self) -> String {
        let mut s = format!("stub bench: slow {} ms, fast {} ms\n", self.slow_ms, self.fast_ms);
        for r in &self.rows {
            writeln!(
                s,
                "  k={}  invocations {}/{} (expected {})  amortized {:.3} ms  predicted {:.3} ms  error {:.2}%  rate ratio {:.2}x",
                r.k,
                r.slow_invocations,
                r.frames,
                r.expected_invocations,
                r.amortized_ms,
                r.predicted_ms,
                100.0 * r.rel_error,
                r.rate_ratio
            )
            .expect("write to string");
        }
        writeln!(
            s,
            "  high-level speedup at k=2: ideal {:.2}x | reference measurement {:.2}x",
            self.ideal_speedup, self.reference_speedup
        )
        .expect("write to string");
        if let Some(r) = &self.real {
            writeln!(
                s,
                "real pipeline over {} frames: raster {:.3} ms, fresh guidance {:.3} ms, extension {:.3} ms, plan {:.3} ms",
                r.frames, r.raster_ms, r.fresh_ms, r.extension_ms, r.plan_ms
            )
            .expect("write to string");
        }
        s
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("bench.csv"), self.to_csv())?;
        std::fs::write(dir.join("bench_summary.txt"), self.summary_text())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invocation_counts_follow_schedule() {
        let rows = bench_stub(10, 0.0, 0.0, &[1, 3]).unwrap();
        assert_eq!(rows[0].slow_invocations, 10);
        assert_eq!(rows[1].slow_invocations, 4);
        assert_eq!(rows[1].expected_invocations, 4);
        assert!(bench_stub(2, 0.0, 0.0, &[3]).is_err());
    }
}
