//! `chiralnet`: generate synthetic datasets, verify invariances, train,
//! evaluate, transform and inspect conformers.
//!
//! Exit status: 0 on success, 1 when a check or run fails, 2 on usage
//! errors (bad flags, bad config, unreadable or invalid input).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "chiralnet", version, about = "Chirality-aware conformer encoder toolkit")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Maximum worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a synthetic enantiomer dataset.
    Generate(GenerateArgs),
    /// Run the invariance check suite over a dataset.
    Verify(VerifyArgs),
    /// Train a model and write checkpoint, log and test metrics.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Apply a geometric transform to every conformer of a dataset.
    Transform(TransformArgs),
    /// Print internal coordinates and coupled torsion groups.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Output dataset (JSON lines).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Label set: contrastive, rs, classify2 or rank_regress.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    n_graphs: Option<usize>,
    #[arg(long)]
    conformers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Model to check; a freshly initialized one from `[model]` otherwise.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Report path (JSON lines); the summary goes to `<out>.summary.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    max_conformers: Option<usize>,
    /// Comma-separated subset of check kinds.
    #[arg(long, value_delimiter = ',')]
    kinds: Option<Vec<String>>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    splits: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    splits: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Metrics file (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Defaults to the task stored in the checkpoint.
    #[arg(long)]
    task: Option<String>,
    /// train, val, test or all. Defaults to test when splits are known.
    #[arg(long)]
    split: Option<String>,
}

#[derive(Debug, Args)]
struct TransformArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Mirror through the plane z = 0.
    #[arg(long)]
    reflect: bool,
    /// Rotate about bond x-y by R radians, written `x,y,R`.
    #[arg(long, value_name = "X,Y,R")]
    rotate_bond: Option<String>,
    /// Apply a random rigid motion per conformer from this seed.
    #[arg(long, value_name = "SEED")]
    rigid_random: Option<u64>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Only the first N conformers.
    #[arg(long)]
    limit: Option<usize>,
}

/// How a command ended badly.
#[derive(Debug)]
pub enum Failure {
    /// Exit 2.
    Usage(anyhow::Error),
    /// Exit 1.
    Failed(anyhow::Error),
}

impl Failure {
    pub fn usage(e: impl Into<anyhow::Error>) -> Self {
        Failure::Usage(e.into())
    }

    pub fn failed(e: impl Into<anyhow::Error>) -> Self {
        Failure::Failed(e.into())
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let config = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(Failure::usage)?,
        None => RunConfig::default(),
    };
    Ok(RunConfig { threads: cli.threads.or(config.threads), ..config })
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = load_config(&cli)?;
    let print = cli.print_config;
    match cli.command {
        Command::Generate(a) => commands::generate(config, a, print),
        Command::Verify(a) => commands::verify(config, a, print),
        Command::Train(a) => commands::train(config, a, print),
        Command::Eval(a) => commands::eval(config, a, print),
        Command::Transform(a) => commands::transform(config, a, print),
        Command::Inspect(a) => commands::inspect(config, a, print),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Failed(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
