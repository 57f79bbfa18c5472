//! `rfadv`: generate data, train a victim, run a black-box campaign and
//! collect plot-ready curves.
//!
//! Exit codes: 0 success, 2 usage, 3 configuration, 4 missing input, 5 runtime failure.
//! Log verbosity comes from `RFADV_LOG` (for example `RFADV_LOG=debug`).

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "rfadv", version, about = "Black-box adversarial attacks on modulation classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory holding every stage's inputs and outputs.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the labelled IQ dataset into <out>/dataset.iqds.
    GenData(Common),
    /// Train and evaluate the configured victim family.
    TrainVictim(Common),
    /// Run the query, surrogate, craft and transfer campaign against a trained victim.
    Campaign(Common),
    /// Merge pre- and post-attack curves into <out>/report/<family>_curves.csv.
    Report(Common),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(c) => commands::gen_data(&ExperimentConfig::load(c.config.as_deref())?, &c.out),
        Command::TrainVictim(c) => commands::train_victim(&ExperimentConfig::load(c.config.as_deref())?, &c.out),
        Command::Campaign(c) => commands::campaign(&ExperimentConfig::load(c.config.as_deref())?, &c.out),
        Command::Report(c) => {
            ExperimentConfig::load(c.config.as_deref())?;
            commands::report(&c.out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RFADV_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
