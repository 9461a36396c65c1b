//! Trains every component on a small configuration and runs the component,
//! multi-rate and extension-horizon ablations. Pass a TOML path to use a
//! different configuration.
//!
//! Run with `cargo run --release --example ablation [config.toml]`.

use std::path::PathBuf;

use goaldiff::harness::{run_gamma_suite, run_horizon_sweep, run_m_suite, train_all, HarnessConfig};

fn main() -> goaldiff::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.toml"));
    let cfg = HarnessConfig::load(&path)?;
    cfg.validate()?;
    let (models, report) = train_all(&cfg)?;
    if let Some(last) = report.refiner_laplace.last() {
        println!("laplace refiner final NLL {last:.3}");
    }

    let m = run_m_suite(&cfg, &models)?;
    print!("{}", m.summary_text());
    let gamma = run_gamma_suite(&cfg, &models)?;
    print!("{}", gamma.summary_text());
    let horizon = run_horizon_sweep(&cfg, &models)?;
    print!("{}", horizon.summary_text());

    let out = std::env::temp_dir().join("goaldiff_ablation");
    m.write(out.join("m"))?;
    gamma.write(out.join("gamma"))?;
    horizon.write(out.join("horizon"))?;
    println!("tables written to {}", out.display());
    Ok(())
}
