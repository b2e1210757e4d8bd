//! Command-line front end: coefficient verification, convergence studies,
//! optimization runs and the adaptation loop, emitting CSV and JSON artifacts.

pub mod commands;
pub mod config;
pub mod output;

use std::fmt;

pub use commands::{
    run_convergence, run_solve, run_verify, ConvergenceResult, ConvergenceRow, SolveBundle, SolveSummary,
    VerifyReport,
};
pub use config::RunConfig;

/// Failure classes with their process exit codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    /// A verification or acceptance check failed (exit 1).
    Verification(String),
    /// Invalid configuration or arguments (exit 2).
    Config(String),
    /// A solver failed (exit 3).
    Solver(String),
    /// Artifacts could not be written (exit 2).
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Solver(m) => write!(f, "solver failure: {m}"),
            CliError::Io(m) => write!(f, "output error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}
