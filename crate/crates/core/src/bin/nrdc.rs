use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nrdc::config::{preset, preset_names, ExperimentConfig};
use nrdc::diffcore::Checkpoint;
use nrdc::experiment::{run_evaluate, run_sweep, run_train, save_evaluation, save_sweep, save_train, CHECKPOINT_FILE};
use nrdc::gradcheck::{run_gradcheck, GradcheckConfig};
use nrdc::signature::{sweep_csv, universality_sweep, UniversalityConfig};
use nrdc::Error;

#[derive(Parser)]
#[command(
    name = "nrdc",
    version,
    about = "Neural RDE controls for non-Markovian stochastic control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and evaluate it on the evaluation grid.
    Train(RunArgs),
    /// Evaluate a saved policy.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint to load [default: <out>/policy.json].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train every model at each training resolution and compare on the
    /// evaluation grid.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Training grids as fractions of the evaluation grid.
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
    },
    /// Finite-difference check of the autodiff tape and the simulator.
    Gradcheck {
        /// Snapshot written by an earlier gradcheck run.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Signature regression onto a path functional at increasing levels.
    Sigdemo {
        /// Snapshot written by an earlier sigdemo run.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        max_level: Option<usize>,
        /// Training samples; half as many are held out.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Bundled config by name.
    #[arg(long)]
    preset: Option<String>,
    /// Named override set inside the config, e.g. `smoke`.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: out_dir from the config, else runs/<name>].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Threads for trajectory simulation; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

impl RunArgs {
    fn load(&self) -> nrdc::Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path, self.profile.as_deref())?,
            (None, Some(name)) => preset(name, self.profile.as_deref())?,
            (None, None) => {
                return Err(Error::Config(format!(
                    "pass --config <file> or --preset <name> (presets: {})",
                    preset_names().join(", ")
                )))
            }
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
            cfg.validate()?;
        }
        let out = match (&self.out, &cfg.out_dir) {
            (Some(o), _) => o.clone(),
            (None, Some(o)) => PathBuf::from(o),
            (None, None) => Path::new("runs").join(if cfg.name.is_empty() { "experiment" } else { &cfg.name }),
        };
        Ok((cfg, out))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Io { .. } | Error::Checkpoint(_) | Error::Json(_) | Error::InvalidArgument(_) => 2,
        _ => 3,
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> nrdc::Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> nrdc::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::Config(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> nrdc::Result<u8> {
    match cli.command {
        Command::Train(args) => {
            let (cfg, out) = args.load()?;
            let (policy, result) = run_train(&cfg, args.workers)?;
            save_train(&out, &*policy, &result)?;
            println!(
                "{} [{}] {} params: evaluation {:.6} ± {:.6} on {} steps",
                result.name,
                result.model,
                result.param_count,
                result.evaluation.mean,
                result.evaluation.std_error,
                result.eval_steps
            );
            if let Some(o) = &result.oracle {
                println!(
                    "{} value {:.6}, relative error {:.4}, pathwise L2 {:.4e}",
                    o.kind, o.value, o.relative_error, o.pathwise_l2
                );
            }
            println!("wrote {}", out.display());
            Ok(0)
        }
        Command::Evaluate { run, checkpoint } => {
            let (cfg, out) = run.load()?;
            let path = checkpoint.unwrap_or_else(|| out.join(CHECKPOINT_FILE));
            let ck = Checkpoint::load(&path)?;
            let result = run_evaluate(&cfg, &ck, run.workers)?;
            save_evaluation(&out, &result)?;
            println!(
                "{} [{}]: evaluation {:.6} ± {:.6} on {} steps",
                result.name, result.model, result.evaluation.mean, result.evaluation.std_error, result.evaluation.steps
            );
            if let Some(o) = &result.oracle {
                println!(
                    "{} value {:.6}, relative error {:.4}",
                    o.kind, o.value, o.relative_error
                );
            }
            Ok(0)
        }
        Command::Sweep { run, fractions } => {
            let (mut cfg, out) = run.load()?;
            if let Some(f) = fractions {
                cfg.sweep.fractions = f;
            }
            let result = run_sweep(&cfg, run.workers)?;
            save_sweep(&out, &result)?;
            print!("{}", result.to_csv());
            println!("wrote {}", out.display());
            Ok(0)
        }
        Command::Gradcheck {
            config,
            seed,
            trials,
            out,
            inject_fault,
        } => {
            let mut cfg: GradcheckConfig = match &config {
                Some(p) => read_toml(p)?,
                None => GradcheckConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = trials {
                cfg.trials = t;
            }
            cfg.inject_fault |= inject_fault;
            if cfg.trials == 0 {
                eprintln!("warning: trials = 0, no checks run");
            }
            let report = run_gradcheck(&cfg)?;
            for t in &report.trials {
                println!(
                    "{:3} {:28} {:.3e} (tol {:.0e}) {}",
                    t.index,
                    t.name,
                    t.max_rel_error,
                    t.tolerance,
                    if t.passed { "ok" } else { "FAIL" }
                );
            }
            if let Some(out) = out {
                let snap = toml::to_string(&cfg).map_err(|e| Error::Config(e.to_string()))?;
                write(&out.join("config.toml"), &snap)?;
                write(&out.join("gradcheck.json"), &serde_json::to_string_pretty(&report)?)?;
            }
            if report.passed {
                println!("{} checks passed", report.trials.len());
                Ok(0)
            } else {
                let w = report.worst().expect("failed report has trials");
                eprintln!(
                    "gradient check failed: worst is trial {} ({}) with relative error {:.3e} > {:.0e}",
                    w.index, w.name, w.max_rel_error, w.tolerance
                );
                Ok(1)
            }
        }
        Command::Sigdemo {
            config,
            max_level,
            samples,
            seed,
            out,
        } => {
            let mut cfg: UniversalityConfig = match &config {
                Some(p) => read_toml(p)?,
                None => UniversalityConfig::default(),
            };
            if let Some(n) = max_level {
                cfg.max_level = n;
            }
            if let Some(n) = samples {
                cfg.train_samples = n;
                cfg.test_samples = n.div_ceil(2);
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let fits = universality_sweep(&cfg).map_err(|e| match e {
                Error::InvalidArgument(m) => Error::Config(m),
                other => other,
            })?;
            let csv = sweep_csv(&fits);
            print!("{csv}");
            if let Some(out) = out {
                let snap = toml::to_string(&cfg).map_err(|e| Error::Config(e.to_string()))?;
                write(&out.join("config.toml"), &snap)?;
                write(&out.join("sigdemo.csv"), &csv)?;
                write(&out.join("sigdemo.json"), &serde_json::to_string_pretty(&fits)?)?;
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
