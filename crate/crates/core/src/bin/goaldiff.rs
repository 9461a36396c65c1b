use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use goaldiff::harness::{
    arm_rollouts, bench_real, bench_stub, run_gamma_suite, run_horizon_sweep, run_m_suite, suite_scenarios, train,
    Arm, BenchReport, HarnessConfig, Models, TrainTarget, ROLLOUT_CSV_HEADER,
};
use goaldiff::harness::train::prepare_training;
use goaldiff::metrics::mean_scores;
use goaldiff::multirate::Mode;
use goaldiff::scene::{Scenario, DT};
use goaldiff::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "goaldiff", version, about = "Goal-guided diffusion planning on synthetic driving scenes")]
struct Cli {
    /// TOML configuration file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the base seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Writes the evaluation scenarios as JSON plus an index CSV.
    GenScenarios {
        /// Number of scenarios (defaults to the suite size).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Clusters expert endpoints into the goal vocabulary.
    BuildVocab,
    /// Trains one component, or everything.
    Train {
        #[arg(value_enum)]
        target: TrainArg,
    },
    /// Closed-loop rollouts of one arm on the suite scenarios.
    Rollout {
        #[arg(long, default_value = "m3")]
        arm: Arm,
        /// Guidance extension mode; gamma0 runs the slow system every frame.
        #[arg(long, default_value = "gamma0")]
        mode: Mode,
        /// Number of scenarios (defaults to the suite size).
        #[arg(long)]
        scenarios: Option<usize>,
    },
    /// Runs an ablation suite.
    Ablate {
        #[arg(value_enum)]
        suite: Suite,
    },
    /// Multi-rate amortization benchmark with stub modules.
    Bench {
        /// Also time the trained pipeline.
        #[arg(long)]
        real: bool,
    },
    /// Writes CSV series (road geometry, agents, executed paths) for plotting.
    EmitPlots {
        #[arg(long, default_value_t = 5)]
        scenarios: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TrainArg {
    Refiner,
    Denoiser,
    Predictor,
    All,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Suite {
    M,
    Gamma,
    Horizon,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> Result<HarnessConfig> {
    let mut cfg = match &cli.config {
        Some(p) => HarnessConfig::load(p)?,
        None => HarnessConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &HarnessConfig) -> Result<()> {
    let out = cli.out.as_path();
    std::fs::create_dir_all(out)?;
    let ck = cfg.checkpoints(out);
    match &cli.command {
        Command::GenScenarios { count } => gen_scenarios(cfg, out, *count),
        Command::BuildVocab => {
            let data = prepare_training(cfg, None)?;
            std::fs::create_dir_all(&ck)?;
            let path = ck.join("vocab.gvc");
            data.vocab.save(&path)?;
            println!("vocabulary of {} goals written to {}", data.vocab.len(), path.display());
            Ok(())
        }
        Command::Train { target } => {
            let target = match target {
                TrainArg::Refiner => TrainTarget::Refiner,
                TrainArg::Denoiser => TrainTarget::Denoiser,
                TrainArg::Predictor => TrainTarget::Predictor,
                TrainArg::All => TrainTarget::All,
            };
            let existing = if ck.join("vocab.gvc").exists() {
                Some(Models::load(&ck, cfg)?)
            } else {
                None
            };
            let (models, report) = train(cfg, target, existing)?;
            models.save(&ck)?;
            report.write_csvs(out)?;
            println!("checkpoints written to {}", ck.display());
            Ok(())
        }
        Command::Rollout { arm, mode, scenarios } => {
            let models = Models::load(&ck, cfg)?;
            let mut c = cfg.clone();
            if let Some(n) = scenarios {
                c.suite.scenarios = *n;
            }
            let set = suite_scenarios(&c)?;
            let records = arm_rollouts(&c, &models, *arm, *mode, &set)?;
            let mut csv = format!("{ROLLOUT_CSV_HEADER}\n");
            for r in &records {
                r.write_csv_rows(&format!("{arm}-{}", r.scenario_seed), &mut csv);
            }
            let path = out.join(format!("rollout_{arm}_{mode}.csv"));
            std::fs::write(&path, csv)?;
            let m = mean_scores(&records.iter().map(|r| r.mean_scores()).collect::<Vec<_>>());
            println!(
                "{arm} {mode} over {} scenarios: composite {:.4} nc {:.3} dac {:.3} ttc {:.3} ep {:.3} comfort {:.3} ec {:.3}",
                records.len(),
                m.composite,
                m.nc,
                m.dac,
                m.ttc,
                m.ep,
                m.comfort,
                m.ec
            );
            println!("frames written to {}", path.display());
            Ok(())
        }
        Command::Ablate { suite } => {
            let models = Models::load(&ck, cfg)?;
            match suite {
                Suite::M => {
                    let t = run_m_suite(cfg, &models)?;
                    t.write(out)?;
                    print!("{}", t.summary_text());
                }
                Suite::Gamma => {
                    let t = run_gamma_suite(cfg, &models)?;
                    t.write(out)?;
                    print!("{}", t.summary_text());
                }
                Suite::Horizon => {
                    let t = run_horizon_sweep(cfg, &models)?;
                    t.write(out)?;
                    print!("{}", t.summary_text());
                }
            }
            Ok(())
        }
        Command::Bench { real } => {
            let b = &cfg.bench;
            let rows = bench_stub(b.frames, b.slow_stub_ms, b.fast_stub_ms, &b.ks)?;
            let real = if *real {
                Some(bench_real(cfg, &Models::load(&ck, cfg)?, cfg.suite.scenarios.min(10))?)
            } else {
                None
            };
            let report = BenchReport::new(cfg, rows, real)?;
            report.write(out)?;
            print!("{}", report.summary_text());
            Ok(())
        }
        Command::EmitPlots { scenarios } => emit_plots(cfg, out, &ck, *scenarios),
    }
}

fn gen_scenarios(cfg: &HarnessConfig, out: &Path, count: Option<usize>) -> Result<()> {
    let mut c = cfg.clone();
    if let Some(n) = count {
        c.suite.scenarios = n;
    }
    let set = suite_scenarios(&c)?;
    let dir = out.join("scenarios");
    std::fs::create_dir_all(&dir)?;
    let mut index = String::from("file,seed,kind,difficulty,command,agents,expert_composite\n");
    for s in &set {
        let name = format!("{}_{}.json", s.kind.as_str(), s.seed);
        s.save(dir.join(&name))?;
        let expert = mean_scores(&s.expert_scores(&cfg.metrics)).composite;
        writeln!(
            index,
            "{name},{},{},{},{:?},{},{expert}",
            s.seed,
            s.kind.as_str(),
            s.difficulty,
            s.command,
            s.agents.len()
        )
        .expect("write to string");
    }
    std::fs::write(dir.join("index.csv"), index)?;
    println!("{} scenarios written to {}", set.len(), dir.display());
    Ok(())
}

fn scene_series(s: &Scenario, csv: &mut String) {
    for (i, line) in s.layout.centerlines.iter().enumerate() {
        for (j, p) in line.points().iter().enumerate() {
            writeln!(csv, "centerline_{i},{j},{},{}", p[0], p[1]).expect("write to string");
        }
    }
    for f in 0..s.frames {
        let p = s.expert_pose(f as f64 * DT);
        writeln!(csv, "expert,{f},{},{}", p.x, p.y).expect("write to string");
    }
    for (a, agent) in s.agents.iter().enumerate() {
        for f in 0..s.frames {
            let st = agent.state_at(&s.layout, f as f64 * DT);
            writeln!(csv, "agent_{a},{f},{},{}", st.center[0], st.center[1]).expect("write to string");
        }
    }
}

fn emit_plots(cfg: &HarnessConfig, out: &Path, ck: &Path, count: usize) -> Result<()> {
    let mut c = cfg.clone();
    c.suite.scenarios = count.min(cfg.suite.scenarios).max(1);
    let set = suite_scenarios(&c)?;
    let models = if ck.join("vocab.gvc").exists() {
        Some(Models::load(ck, cfg)?)
    } else {
        log::warn!("no checkpoints in {}; writing scene geometry only", ck.display());
        None
    };
    let mut paths: Vec<(Arm, Vec<goaldiff::harness::RolloutRecord>)> = Vec::new();
    if let Some(m) = &models {
        for arm in Arm::ALL {
            match arm_rollouts(&c, m, arm, Mode::Gamma0, &set) {
                Ok(r) => paths.push((arm, r)),
                Err(Error::Checkpoint(why)) => log::warn!("no {arm} paths: {why}"),
                Err(e) => return Err(e),
            }
        }
    }
    let dir = out.join("plots");
    std::fs::create_dir_all(&dir)?;
    for (i, s) in set.iter().enumerate() {
        let mut csv = String::from("series,index,x,y\n");
        scene_series(s, &mut csv);
        for (arm, records) in &paths {
            for f in &records[i].frames {
                writeln!(csv, "ego_{arm},{},{},{}", f.frame, f.pose.x, f.pose.y).expect("write to string");
            }
        }
        std::fs::write(dir.join(format!("scene_{}_{}.csv", s.kind.as_str(), s.seed)), csv)?;
    }
    println!("{} plot series written to {}", set.len(), dir.display());
    Ok(())
}
