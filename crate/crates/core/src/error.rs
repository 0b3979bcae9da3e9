use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the solver and the study harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("value {value} lies outside the potential domain ({domain})")]
    Domain { value: f64, domain: &'static str },

    #[error("linear solver failed after {iterations} iterations (relative residual {residual:e})")]
    SolverFailure { iterations: usize, residual: f64 },

    #[error(
        "Newton iteration failed at t = {t}: residual {residual:e} after {iterations} iterations; \
         try a smaller time step"
    )]
    StepFailure {
        t: f64,
        iterations: usize,
        residual: f64,
    },

    #[error("rate fit refused: {0}")]
    Fit(String),

    #[error("configuration errors:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("invalid comparison: {0}")]
    InvalidComparison(String),

    #[error("failed to parse {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
