//! `facmix`: fit, summarise and score factor-analytic mixture models.

mod commands;
mod config;
mod runs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use facmix::error::Error;

#[derive(Parser)]
#[command(
    name = "facmix",
    about = "Bayesian (nonparametric) factor-analytic mixture clustering",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw replicate datasets from the factor-analytic mixture generator.
    Simulate {
        /// Simulation configuration (TOML or JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for the CSV + truth-sidecar pairs.
        #[arg(long)]
        out: PathBuf,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Fit a model (or a grid of models) and record the chains.
    Fit {
        /// Run configuration (TOML or JSON).
        #[arg(long)]
        config: PathBuf,
        /// Run directory to create.
        #[arg(long)]
        out: PathBuf,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for grid fits (default: one per grid member, capped
        /// by the machine).
        #[arg(long)]
        threads: Option<usize>,
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Summarise a recorded run: posterior modes, intervals, identified means.
    Summarise {
        /// Run directory (a single fit, or a grid root).
        run_dir: PathBuf,
    },
    /// Score a run's MAP partition against known labels.
    Score {
        /// Run directory (a single fit, or a grid root).
        run_dir: PathBuf,
        /// Label file: one label per line, or a CSV column.
        #[arg(long)]
        truth: PathBuf,
        /// Name of the label column when `truth` is a CSV with a header.
        #[arg(long)]
        label_column: Option<String>,
        /// Skip the first line of a plain label file.
        #[arg(long)]
        has_header: bool,
    },
    /// Tabulate several runs side by side.
    Compare {
        /// Run directories to compare.
        run_dirs: Vec<PathBuf>,
        /// Write the comparison CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, out, seed, force } => {
            commands::simulate::run(&config, &out, seed, force)
        }
        Command::Fit { config, out, seed, threads, force } => {
            commands::fit::run(&config, &out, seed, threads, force)
        }
        Command::Summarise { run_dir } => commands::summarise::run(&run_dir),
        Command::Score { run_dir, truth, label_column, has_header } => {
            commands::score::run(&run_dir, &truth, label_column.as_deref(), has_header)
        }
        Command::Compare { run_dirs, out } => commands::compare::run(&run_dirs, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Validation(_)
                | Error::Param(_)
                | Error::Shape(_)
                | Error::CriterionMismatch(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
