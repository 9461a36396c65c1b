//! Multi-rate amortization with stub modules: a slow goal system every k
//! frames and a fast planner every frame.

use goaldiff::harness::{bench_stub, BenchReport, HarnessConfig};

fn main() -> goaldiff::Result<()> {
    let mut cfg = HarnessConfig::default();
    cfg.bench.frames = 40;
    let b = &cfg.bench;
    let rows = bench_stub(b.frames, b.slow_stub_ms, b.fast_stub_ms, &b.ks)?;
    let report = BenchReport::new(&cfg, rows, None)?;
    print!("{}", report.summary_text());
    Ok(())
}
