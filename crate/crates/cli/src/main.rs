//! `iloci` command-line driver.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use iloci::Error;

/// Environment variable holding the log filter (`error`, `info`, `debug`, ...).
pub const LOG_ENV: &str = "ILOCI_LOG";

pub mod exit {
    pub const OK: u8 = 0;
    pub const OTHER: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const DATA: u8 = 3;
    pub const DIVERGENCE: u8 = 4;
    pub const MISSING_INPUT: u8 = 5;
}

#[derive(Parser, Debug)]
#[command(name = "iloci", version, about = "Incremental concept learning from demonstrations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load, resample and encode the corpus into the cache file.
    Preprocess {
        #[command(flatten)]
        common: Common,
    },
    /// Teach demonstrations to a fresh memory and save it.
    Learn {
        #[command(flatten)]
        common: Common,
        /// Learn only the training partition of this fold; all demos otherwise.
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Classify demonstrations against a saved memory.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        snapshot: PathBuf,
        /// Classify the test partition of this fold.
        #[arg(long, conflicts_with = "demos")]
        fold: Option<usize>,
        /// Demo ids such as `Sine#3`; every cached demo when empty.
        demos: Vec<String>,
    },
    /// Five-fold cross-validation with the full report bundle.
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Rebuild the report bundle from a finished eval run.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

pub fn exit_code(e: &Error) -> u8 {
    if e.is_divergence() {
        return exit::DIVERGENCE;
    }
    match e {
        Error::Config(_) => exit::CONFIG,
        Error::MissingInput(_) => exit::MISSING_INPUT,
        Error::CorpusIncomplete(_)
        | Error::Parse { .. }
        | Error::DegenerateInput(_)
        | Error::IkFailure { .. }
        | Error::UnknownDemo(_)
        | Error::EmptyMemory
        | Error::VersionMismatch { .. }
        | Error::CorruptFile(_)
        | Error::Json(_)
        | Error::Csv(_) => exit::DATA,
        Error::RehearsalFailed(inner) => exit_code(inner),
        _ => exit::OTHER,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Preprocess { common } => commands::preprocess(&common),
        Command::Learn { common, fold } => commands::learn(&common, fold),
        Command::Infer {
            common,
            snapshot,
            fold,
            demos,
        } => commands::infer(&common, &snapshot, fold, &demos),
        Command::Eval { common } => commands::eval(&common),
        Command::Report { common } => commands::report(&common),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
