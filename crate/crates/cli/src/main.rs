use clap::{Args, Parser, Subcommand};
use smflow_cli::{run_file, RunOptions};
use std::path::PathBuf;
use std::process::ExitCode;

/// Simulates SGD chains and their continuum limits, and runs the
/// verification experiments that compare them.
#[derive(Parser)]
#[command(name = "smflow", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record chain or flow trajectories.
    Simulate(RunArgs),
    /// Weak-error sweep over learning rates with an order fit.
    WeakError(RunArgs),
    /// Two-point covariation of the chain and both flow couplings.
    TwoPoint(RunArgs),
    /// One-step generator-expansion residuals over a learning-rate sweep.
    Generator(RunArgs),
    /// Finite-width Wasserstein gap against a large-ensemble flow reference.
    Meanfield(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to the JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = library default).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Output directory for summary.json and the CSV files.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Simulate(a) => ("simulate", a),
        Command::WeakError(a) => ("weak-error", a),
        Command::TwoPoint(a) => ("two-point", a),
        Command::Generator(a) => ("generator", a),
        Command::Meanfield(a) => ("meanfield", a),
    };
    let opts = RunOptions {
        seed_override: args.seed,
        workers: args.workers,
        out_dir: args.out.clone(),
    };
    match run_file(kind, &args.config, &opts) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("assertions failed; see summary.json");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
