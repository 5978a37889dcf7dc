use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rbsde_cli::{run, Command, Options};

#[derive(Parser)]
#[command(
    name = "rbsde",
    version,
    about = "Penalized and reflected BSDE solvers for optimal switching systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check the standing assumptions on the configured problem.
    Validate(Args),
    /// Simulate, solve the penalized (or reflected) system and export.
    Solve(Args),
    /// Run the penalty ladder and test its convergence statistics.
    Converge(Args),
    /// Lattice dynamic program for decoupled problems.
    Oracle(Args),
}

#[derive(clap::Args)]
struct Args {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Top-level seed (overrides simulate.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress the printed tables.
    #[arg(long)]
    quiet: bool,
    /// Also write the simulated forward paths.
    #[arg(long)]
    dump_paths: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Validate(a) => (Command::Validate, a),
        Cmd::Solve(a) => (Command::Solve, a),
        Cmd::Converge(a) => (Command::Converge, a),
        Cmd::Oracle(a) => (Command::Oracle, a),
    };
    let opts = Options {
        command,
        config: args.config,
        out: args.out,
        seed: args.seed,
        quiet: args.quiet,
        dump_paths: args.dump_paths,
    };
    match run(&opts) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            if !opts.quiet {
                println!("{}: checks failed", command.name());
            }
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
