use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("power iteration did not converge in {iters} iterations (best estimate {estimate}, last relative change {rel_change:e})")]
    NormNotConverged {
        iters: usize,
        estimate: f64,
        rel_change: f64,
    },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("SVD failed: {0}")]
    SvdFailed(String),

    #[error("degenerate regression: {0}")]
    DegenerateRegression(String),

    #[error("step size {step} outside the admissible interval (0, {limit})")]
    StepOutOfRange { step: f64, limit: f64 },

    #[error("non-finite value encountered at iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("linear solver stopped after {iters} iterations with relative residual {residual:e}")]
    SolverNotConverged { iters: usize, residual: f64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse failure class, used by the command-line runner to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Numerical,
    Io,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) | Error::Unsupported(_) => {
                ErrorClass::Config
            }
            Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Parse { .. } => ErrorClass::Io,
            Error::DimensionMismatch { .. }
            | Error::NormNotConverged { .. }
            | Error::SvdFailed(_)
            | Error::DegenerateRegression(_)
            | Error::StepOutOfRange { .. }
            | Error::NonFinite { .. }
            | Error::SolverNotConverged { .. } => ErrorClass::Numerical,
        }
    }
}
