//! `coevo` command-line driver.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 input parse error,
//! 3 invalid configuration, 4 missing run artifacts.

pub mod args;
pub mod commands;
pub mod config;
pub mod run_dir;

use std::fmt;
use std::process::ExitCode;

pub use args::{Cli, Command, ExecutorSpec};

#[derive(Debug)]
pub enum CliError {
    Parse(String),
    Config(String),
    Missing(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Parse(_) => 2,
            CliError::Config(_) => 3,
            CliError::Missing(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Parse(m) => write!(f, "parse error: {m}"),
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Missing(m) => write!(f, "missing artifact: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Runs a parsed command line, writing records to `out`.
pub fn run(cli: &Cli, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(format!("building worker pool: {e}")))?;
    // Records are buffered inside the pool and written by the calling thread.
    let mut buf = Vec::new();
    let result = pool.install(|| commands::dispatch(cli, &mut buf));
    out.write_all(&buf)?;
    out.flush()?;
    result
}

pub fn exit_code(result: Result<(), CliError>) -> ExitCode {
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("coevo: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
