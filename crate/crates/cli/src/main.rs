use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

#[derive(Parser)]
#[command(name = "scalegmn", version, about = "Scale equivariant graph metanetworks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone, Debug)]
pub struct CommonArgs {
    /// JSON configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a zoo of fitted INRs or trained CNNs.
    GenZoo(CommonArgs),
    /// Train a metanetwork on a zoo.
    Train(CommonArgs),
    /// Evaluate a trained run, optionally on an orbit-transformed copy.
    Eval(CommonArgs),
    /// Check invariance and equivariance of freshly initialized models.
    Certify(CommonArgs),
    /// Write the canonical representative of every network in a zoo.
    Canonicalize(CommonArgs),
    /// Run the hand-wired forward/backward simulation on random networks.
    Simulate(CommonArgs),
}

fn init_threads() -> Result<(), commands::CliError> {
    if let Ok(v) = std::env::var("SCALEGMN_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| commands::CliError::Usage(format!("SCALEGMN_THREADS must be a count, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| commands::CliError::Usage(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = || -> Result<(), commands::CliError> {
        init_threads()?;
        match &cli.command {
            Command::GenZoo(a) => commands::gen_zoo(a),
            Command::Train(a) => commands::train(a),
            Command::Eval(a) => commands::eval(a),
            Command::Certify(a) => commands::certify(a),
            Command::Canonicalize(a) => commands::canonicalize(a),
            Command::Simulate(a) => commands::simulate(a),
        }
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
