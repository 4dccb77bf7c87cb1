//! `mmfkey`: runs seeded key-establishment experiments from a TOML
//! configuration and writes their data tables and session logs.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 security abort,
//! 3 internal error.

mod commands;
mod config;
mod figures;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::Format;
use crate::figures::Figure;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("session aborted: {0}")]
    Abort(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Abort(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl From<mmfkey::Error> for CliError {
    fn from(e: mmfkey::Error) -> Self {
        use mmfkey::Error as E;
        match e {
            E::InvalidParameter { .. }
            | E::Shape(_)
            | E::UnknownSymbol { .. }
            | E::DimensionMismatch { .. } => CliError::Config(e.to_string()),
            E::Malformed(_) => CliError::Config(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mmfkey",
    version,
    about = "Key establishment through a mode-scrambling multimode fiber"
)]
pub struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file, or directory for `session`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Table format; overrides the configured one.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Calibrate Bob's detectors through a simulated fiber and report the
    /// focusing fidelity per symbol.
    Calibrate,
    /// Run a full session, or summarize a recorded transcript.
    Session {
        /// Transcript (JSON lines) to summarize instead of running.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Write the data table behind one figure.
    Figure {
        #[arg(value_enum)]
        id: Figure,
    },
    /// Security figures of merit for the configured link.
    Report,
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors, which is reserved for aborts here
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mmfkey: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
