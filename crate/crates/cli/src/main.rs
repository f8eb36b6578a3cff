use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use factorq_cli::{cmd_check, cmd_dump_qtable, cmd_reproduce_matrix, cmd_train, report};

/// Cooperative multi-agent value factorization: training, reproduction and checks.
///
/// Relative output directories are placed under $FACTORQ_OUTPUT_ROOT when it is set.
#[derive(Parser)]
#[command(name = "factorq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of an experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train on nondec-2x2 with uniform exploration and print the learned tables.
    ReproduceMatrix {
        /// vdn, qmix, qtran or qtranpp
        #[arg(long)]
        alg: String,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
        /// Env steps per seed.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Run property suites and print a JSON summary.
    Check {
        /// grad, mono, theorem1, signal or all
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the Q tables of a checkpoint on a matrix-game preset.
    DumpQtable {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "nondec-2x2")]
        env: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = report(match cli.command {
        Command::Train { config } => cmd_train(&config),
        Command::ReproduceMatrix { alg, seeds, out, steps } => cmd_reproduce_matrix(&alg, seeds, &out, steps),
        Command::Check { suite, seed } => cmd_check(&suite, seed),
        Command::DumpQtable { checkpoint, env } => cmd_dump_qtable(&checkpoint, &env),
    });
    ExitCode::from(code as u8)
}
