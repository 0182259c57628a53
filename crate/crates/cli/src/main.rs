use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use torus_lab_cli::{resolve_threads, run, Command, RunOptions, EXIT_ERROR};

/// Random compositions of torus maps: certification, measures and harness checks.
#[derive(Debug, Parser)]
#[command(name = "torus-lab", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for CSV artifacts and summary.txt.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, 0 for automatic; falls back to TORUS_LAB_THREADS.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let threads = match resolve_threads(args.threads) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_ERROR as u8);
        }
    };
    let opts = RunOptions { config: args.config, out: args.out, seed: args.seed, threads };
    ExitCode::from(run(args.command, &opts) as u8)
}
