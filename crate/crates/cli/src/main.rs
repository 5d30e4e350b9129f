//! `gbbm` — experiments with Gaussian bosonic Born machines.

mod checkpoint;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gbbm::MeasurementKind;

use commands::{BaselineKind, EvalSource};
use config::LoadedConfig;
use error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "gbbm", version, about = "Train and sample Gaussian bosonic Born machines")]
struct Cli {
    /// Worker threads for string evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/test datasets from the config's generator block.
    GenData {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train a model; writes checkpoint.bin and history.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint (or a sample file) against the test set.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, conflicts_with = "samples", required_unless_present = "samples")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Draw samples from a checkpoint with the exact desk-scale sampler.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, short)]
        n: usize,
        /// Defaults to the measurement the model was trained with.
        #[arg(long)]
        kind: Option<MeasurementKind>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = gbbm::sampler::DEFAULT_MODE_LIMIT)]
        limit: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit and score a classical baseline.
    Baseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        kind: BaselineKind,
        /// Number of baseline samples (default: eval.baseline_samples).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Print a checkpoint summary.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn list(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return error::config_error("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match cli.command {
        Command::GenData { config } => list(&commands::gen_data(&LoadedConfig::load(&config)?)?),
        Command::Train { config, resume } => {
            let s = commands::train(&LoadedConfig::load(&config)?, resume.as_deref())?;
            println!(
                "trained to episode {}; final loss {}; wrote {}",
                s.episodes,
                s.final_loss.map_or("n/a".into(), |l| format!("{l:.6e}")),
                s.checkpoint.display()
            );
        }
        Command::Eval {
            config,
            checkpoint,
            samples,
        } => {
            let source = match (&checkpoint, &samples) {
                (Some(c), _) => EvalSource::Checkpoint(c),
                (None, Some(s)) => EvalSource::Samples(s),
                (None, None) => unreachable!("clap requires one source"),
            };
            list(&commands::eval(&LoadedConfig::load(&config)?, source)?);
        }
        Command::Sample {
            checkpoint,
            n,
            kind,
            seed,
            limit,
            out,
        } => {
            commands::sample(&checkpoint, n, kind, seed, limit, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Baseline { config, kind, samples } => {
            list(&commands::baseline(&LoadedConfig::load(&config)?, kind, samples)?)
        }
        Command::Inspect { checkpoint } => print!("{}", commands::inspect(&checkpoint)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
