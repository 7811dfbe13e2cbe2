use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use wnn_cli::commands;
use wnn_cli::config::ConfigArgs;

#[derive(Parser)]
#[command(
    name = "wnn",
    version,
    about = "Windowed nearest neighbour digit classification experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify the test set and write per-digit errors and predictions.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        /// Stop after this many batches, leaving a checkpoint to resume from.
        #[arg(long)]
        max_batches: Option<usize>,
    },
    /// Evaluate several window sizes and write the digits x sizes grid.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        max_batches: Option<usize>,
    },
    /// Greedily exclude windows and write the error-vs-excluded curve.
    Prune {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Print the size of every training-set extension.
    AugmentStats {
        #[command(flatten)]
        config: ConfigArgs,
        /// Use the published per-digit counts instead of loading the data.
        #[arg(long)]
        nominal: bool,
    },
    /// Check the fast engine against the reference implementation.
    Selfcheck {
        /// Random toy instances to compare.
        #[arg(long, default_value_t = 50)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Eval {
            config,
            max_batches,
        } => {
            let cfg = config.resolve()?;
            commands::with_workers(cfg.workers, || commands::eval(&cfg, max_batches))??;
        }
        Command::Sweep {
            config,
            max_batches,
        } => {
            let cfg = config.resolve()?;
            commands::with_workers(cfg.workers, || commands::sweep(&cfg, max_batches))??;
        }
        Command::Prune { config } => {
            let cfg = config.resolve()?;
            commands::with_workers(cfg.workers, || commands::prune_cmd(&cfg))??;
        }
        Command::AugmentStats { config, nominal } => {
            let cfg = config.resolve()?;
            commands::augment_stats(&cfg, nominal)?;
        }
        Command::Selfcheck {
            instances,
            seed,
            workers,
        } => {
            let checks = commands::with_workers(workers, || commands::selfcheck(instances, seed))??;
            commands::print_selfcheck(&checks)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
