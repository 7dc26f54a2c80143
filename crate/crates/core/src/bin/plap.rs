use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use plap::cli::{run_file, Subcommand, EXIT_CONFIG};

#[derive(Clone, Copy, ValueEnum)]
enum Command {
    Solve,
    Branch,
    Regions,
    Spectra,
    Verify,
}

/// p-Laplacian problems with critical gradient growth.
#[derive(Parser)]
#[command(version, about)]
struct Args {
    /// What to run; replaces `subcommand` from the `[run]` block.
    command: Command,
    /// Scenario file.
    #[arg(long)]
    config: PathBuf,
    /// Seed for randomized starts (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PLAP_LOG", "error")).init();
    #[cfg(feature = "parallel")]
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("cannot size the thread pool: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    }
    let sub = match args.command {
        Command::Solve => Subcommand::Solve,
        Command::Branch => Subcommand::Branch,
        Command::Regions => Subcommand::Regions,
        Command::Spectra => Subcommand::Spectra,
        Command::Verify => Subcommand::Verify,
    };
    ExitCode::from(run_file(&args.config, Some(sub), args.seed, args.out) as u8)
}
