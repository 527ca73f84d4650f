use thiserror::Error;

/// Errors shared by every module of the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Input violates the mathematical domain of an operation (e.g. det ≤ 0).
    #[error("domain error: {0}")]
    Domain(String),

    /// A stated precondition of a check or experiment does not hold.
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// Malformed or inconsistent input data.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Iterative method stopped before meeting its tolerance.
    #[error("{method} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// Line search could not find an admissible step; carries the last
    /// feasible iterate (node values) for inspection or restart.
    #[error("line search failed after {iterations} iterations (gradient residual {residual:e})")]
    LineSearch {
        iterations: usize,
        residual: f64,
        last_feasible: Vec<f64>,
    },

    /// Problem size beyond what the exact solver accepts.
    #[error("size limit exceeded: {0}")]
    SizeLimit(String),

    #[error("parse error at {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::InvalidInput(format!("json: {e}"))
    }
}
