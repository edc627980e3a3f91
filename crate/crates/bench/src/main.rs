use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fembed_bench::analysis::Neighbor;
use fembed_bench::config::{ConfigError, ExperimentConfig, Task};
use fembed_bench::experiment::{self, ExperimentError};

/// Formula embedding benchmark runner.
#[derive(Parser)]
#[command(name = "fembed", version)]
struct Cli {
    /// Overrides `training.seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and write the datasets a config describes.
    PrepareData { config: PathBuf },
    /// Run the configured task.
    Train { config: PathBuf },
    /// Test metrics of a saved model.
    Evaluate {
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Attempt the test goals with a saved policy.
    Prove {
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Nearest neighbours of an expression under a saved encoder.
    Analyze {
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        query: String,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::ConfigInvalid(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(path).map_err(|e| match e {
        ConfigError::Io { .. } | ConfigError::Syntax { .. } | ConfigError::Invalid { .. } => Failure::Usage(e.to_string()),
    })?;
    if let Some(s) = seed {
        cfg.training.seed = s;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Command::PrepareData { config } => {
            let cfg = load(&config, cli.seed)?;
            for p in experiment::prepare_data(&cfg)? {
                println!("{}", p.display());
            }
        }
        Command::Train { config } => {
            let cfg = load(&config, cli.seed)?;
            let report = experiment::run_experiment(&cfg)?;
            for (k, v) in &report.test {
                println!("test {k} = {v:.4}");
            }
        }
        Command::Evaluate { config, checkpoint } => {
            let cfg = load(&config, cli.seed)?;
            for (k, v) in experiment::evaluate_checkpoint(&cfg, &checkpoint)? {
                println!("{k} = {v:.4}");
            }
        }
        Command::Prove { config, checkpoint } => {
            let cfg = load(&config, cli.seed)?;
            println!("pass_at_1 = {:.4}", experiment::prove_with_checkpoint(&cfg, &checkpoint)?);
        }
        Command::Analyze { config, checkpoint, query } => {
            let mut cfg = load(&config, cli.seed)?;
            cfg.task = Task::Analyze;
            cfg.analysis.checkpoint = Some(checkpoint);
            cfg.analysis.query = Some(query);
            let report = experiment::run_experiment(&cfg)?;
            let rows: Vec<Neighbor> = serde_json::from_value(report.extra["neighbors"].clone()).map_err(|e| Failure::Runtime(e.to_string()))?;
            for r in rows {
                println!("{:.6}\t{}", r.distance, r.expr);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("usage error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
