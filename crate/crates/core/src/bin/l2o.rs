use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use l2o::bench::{generate, report, run_experiment, ExperimentConfig, Method, RunOptions};
use l2o::error::Error;

/// Learning-to-optimize benchmark runner.
#[derive(Parser)]
#[command(name = "l2o", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (defaults to `output` from the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the problem suites of every seed as checkpoint files.
    Gen(Common),
    /// Train one learned method and save its models.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: String,
    },
    /// Evaluate the configured methods, loading models from `--models`.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        models: PathBuf,
    },
    /// Aggregate `records.csv` into summary tables.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train, evaluate and report in one go.
    Run {
        #[command(flatten)]
        common: Common,
        /// Reuse models found here instead of training.
        #[arg(long)]
        models: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), Failure> {
    let mut cfg = ExperimentConfig::from_file(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| Failure::Config("no output directory: pass --out or set [experiment] output".into()))?;
    Ok((cfg, out))
}

/// `dir/models` when it exists, else `dir` itself.
fn models_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("models");
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

fn execute(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<(), Failure> {
    let summary = run_experiment(cfg, opts)?;
    eprintln!("{} records written to {}", summary.records, opts.out.display());
    if summary.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Run(format!(
            "{} run(s) failed, see {}:\n{}",
            summary.failures.len(),
            opts.out.join("failures.txt").display(),
            summary.failures.join("\n")
        )))
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Gen(common) => {
            let (cfg, out) = load(&common)?;
            for path in generate(&cfg, &out)? {
                eprintln!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Train { common, method } => {
            let (mut cfg, out) = load(&common)?;
            let m: Method = method.parse()?;
            if !m.is_learned() {
                return Err(Failure::Config(format!("{m} has nothing to train")));
            }
            cfg.methods = vec![m];
            cfg.validate()?;
            execute(
                &cfg,
                &RunOptions {
                    out,
                    models: None,
                    train_only: true,
                },
            )
        }
        Command::Eval { common, models } => {
            let (cfg, out) = load(&common)?;
            execute(
                &cfg,
                &RunOptions {
                    out,
                    models: Some(models_dir(&models)),
                    train_only: false,
                },
            )
        }
        Command::Report { input, out } => {
            let rows = report(&input, &out)?;
            eprintln!("{} summary rows written to {}", rows.len(), out.display());
            Ok(())
        }
        Command::Run { common, models } => {
            let (cfg, out) = load(&common)?;
            let result = execute(
                &cfg,
                &RunOptions {
                    out: out.clone(),
                    models: models.as_deref().map(models_dir),
                    train_only: false,
                },
            );
            if out.join("records.csv").exists() {
                report(&out, &out)?;
            }
            result
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
