use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mrbsde_cli::{execute, load_config, Experiment, Overrides, RunOptions, RunStatus};

/// Mean-reflected BSDE experiments.
#[derive(Debug, Parser)]
#[command(name = "mrbsde", version)]
struct Args {
    #[arg(value_enum)]
    subcommand: Experiment,
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, 0 for all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// One of sine, affine, boundary, zdrift.
    #[arg(long)]
    preset: Option<String>,
    /// Record per-level wall-clock times (makes convergence.csv non-reproducible).
    #[arg(long)]
    wall_clock: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let overrides = Overrides { preset: args.preset, seed: args.seed, threads: args.threads, out: args.out };
    let config = match load_config(args.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match execute(&config, args.subcommand, RunOptions { wall_clock: args.wall_clock }) {
        Ok(RunStatus::Ok) => {
            println!("{}: results in {}", args.subcommand.name(), config.output.dir.display());
            ExitCode::SUCCESS
        }
        Ok(RunStatus::NotConverged) => {
            eprintln!("{}: schedule exhausted; trace in {}", args.subcommand.name(), config.output.dir.display());
            ExitCode::from(2)
        }
        Ok(RunStatus::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
