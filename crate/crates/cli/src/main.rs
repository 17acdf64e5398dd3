use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use iternas_cli::commands::{cmd_eval, cmd_pareto, cmd_report, cmd_search};
use iternas_cli::exit::{CliError, OK};

#[derive(Parser)]
#[command(name = "iternas", version, about = "Hardware-aware iterative evolutionary architecture search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a search and write its artifacts to the output directory.
    Search {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `search.seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Maximum concurrent oracle evaluations.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Print cost, constraint checks and fitness of one genome as JSON.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        genome: PathBuf,
    },
    /// Print the params/fitness Pareto front of an evaluation log as CSV.
    Pareto {
        #[arg(long)]
        evals: PathBuf,
    },
    /// Print a JSON summary of a run directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Search { config, seed, jobs } => {
            let summary = cmd_search(&config, seed, jobs, &mut out)?;
            serde_json::to_writer(&mut out, &summary)?;
            writeln!(out)?;
        }
        Command::Eval { config, genome } => {
            serde_json::to_writer_pretty(&mut out, &cmd_eval(&config, &genome)?)?;
            writeln!(out)?;
        }
        Command::Pareto { evals } => {
            cmd_pareto(&evals, &mut out)?;
        }
        Command::Report { dir } => {
            serde_json::to_writer_pretty(&mut out, &cmd_report(&dir)?)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::from(OK as u8),
        Err(e) => {
            eprintln!("iternas: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
