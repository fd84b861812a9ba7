//! The `cops` command line: synthetic data, ingestion, offline memory
//! building, evaluation, ablation, history sweeps, and single-query traces.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{Overrides, RunConfig};
pub use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "cops", version, about = "Memory-augmented personalized search re-ranking")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `pipeline.ranker=term`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Users processed in parallel.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory (`paths.out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus, log, manifest, and mock rules.
    Synth,
    /// Parse the log, split history from test queries, attach candidates.
    Ingest,
    /// Build sensory and long-term memory for every user.
    BuildMemory,
    /// Re-rank every test query and write rankings and traces.
    Run,
    /// Like `run`, plus baselines and the repeated/non-repeated breakdown.
    Eval,
    /// Evaluate the five memory configurations.
    Ablate,
    /// Rebuild memory from growing shares of history and evaluate each.
    Sweep,
    /// Trace one query of one user.
    Case {
        #[arg(long)]
        user: String,
        #[arg(long)]
        query: String,
        /// Print the trace as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    let overrides = Overrides {
        set: cli.common.set.clone(),
        seed: cli.common.seed,
        jobs: cli.common.jobs,
        out: cli.common.out.clone(),
    };
    let cfg = RunConfig::load(cli.common.config.as_deref(), &overrides)?;
    match &cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Ingest => commands::ingest(&cfg).map(drop),
        Command::BuildMemory => commands::build_memory(&cfg).map(drop),
        Command::Run => commands::run(&cfg).map(drop),
        Command::Eval => commands::eval(&cfg).map(drop),
        Command::Ablate => commands::ablate(&cfg).map(drop),
        Command::Sweep => commands::sweep(&cfg).map(drop),
        Command::Case { user, query, json } => {
            let trace = commands::case(&cfg, user, query)?;
            if *json {
                let text = serde_json::to_string_pretty(&trace).map_err(|e| cops_core::Error::Data(e.to_string()))?;
                println!("{text}");
            } else {
                print!("{}", commands::case_table(&trace));
            }
            Ok(())
        }
    }
}
