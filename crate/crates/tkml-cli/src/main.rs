//! Experiment orchestrator: generate data, train a victim, run attacks
//! across k and target strategies, and aggregate metric tables.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use tkml::Error;

#[derive(Parser)]
#[command(name = "tkml", version, about = "Top-k multi-label adversarial attack runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-label dataset (JSON lines).
    GenData(GenDataArgs),
    /// Train an MLP victim on a dataset and save it as JSON.
    Train(TrainArgs),
    /// Run an attack over the correctly-classified instances of a dataset.
    Attack(AttackArgs),
    /// Aggregate results files into CSV/JSON metric tables.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "data.jsonl")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    avg_labels: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "data.jsonl")]
    data: PathBuf,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    /// Hidden layer widths (repeatable).
    #[arg(long)]
    hidden: Vec<usize>,
    /// Skip the first N instances of the dataset.
    #[arg(long)]
    skip: Option<usize>,
    /// Use at most N instances (after `--skip`).
    #[arg(long)]
    take: Option<usize>,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "model.json")]
    model: PathBuf,
    #[arg(long, default_value = "data.jsonl")]
    data: PathBuf,
    #[arg(long, default_value = "results.jsonl")]
    out: PathBuf,
    /// untargeted | universal | targeted | mlap
    #[arg(long)]
    mode: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    /// Extra cutoff ranks to evaluate success at (repeatable).
    #[arg(long = "k-prime")]
    k_prime: Vec<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// best | random | worst (targeted and mlap modes)
    #[arg(long)]
    strategy: Option<String>,
    /// Target UASR for the universal attack.
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Disable the l2 projection of z.
    #[arg(long)]
    no_projection: bool,
    /// Optional CSV sidecar with the raw perturbation vectors.
    #[arg(long)]
    dump_z: Option<PathBuf>,
    /// Skip the first N instances of the dataset.
    #[arg(long)]
    skip: Option<usize>,
    /// Use at most N instances (after `--skip`).
    #[arg(long)]
    take: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Output base path; writes `<out>.csv` and `<out>.json`.
    #[arg(long, default_value = "report")]
    out: PathBuf,
    /// Results files to aggregate.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidParameter { .. } | Error::ShapeMismatch { .. } => 1,
        Error::Io(_) | Error::Json(_) | Error::Parse { .. } => 2,
        Error::Invariant(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through the error value
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::GenData(args) => commands::gen_data(args),
        Command::Train(args) => commands::train(args),
        Command::Attack(args) => commands::attack(args),
        Command::Report(args) => commands::report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
