use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spde_holder::run::{OUT_ENV, THREADS_ENV};
use spde_holder::{dispatch, Command, Invocation};

#[derive(Debug, Parser)]
#[command(name = "spde-holder", version, about = "Hoelder-regularity Monte Carlo lab for parabolic SPDEs")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = OUT_ENV)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, env = THREADS_ENV)]
    threads: Option<usize>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Simulate the ensemble described by the config.
    Simulate(Common),
    /// Analyze a simulated ensemble.
    Analyze(Common),
    /// Run the semigroup diagnostics.
    VerifySemigroup(Common),
    /// Bundle moment, growth, threshold, tail and increment studies.
    Report(Common),
    /// Run the oracle suite.
    Selftest(Common),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (command, common) = match cli.command {
        Sub::Simulate(c) => (Command::Simulate, c),
        Sub::Analyze(c) => (Command::Analyze, c),
        Sub::VerifySemigroup(c) => (Command::VerifySemigroup, c),
        Sub::Report(c) => (Command::Report, c),
        Sub::Selftest(c) => (Command::Selftest, c),
    };
    let inv = Invocation {
        config: common.config,
        out: common.out,
        threads: common.threads,
        seed: common.seed,
    };
    match dispatch(command, &inv) {
        Ok(outcome) => {
            for f in outcome.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
