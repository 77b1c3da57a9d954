use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("uniqueness not guaranteed: lambda = {lambda:.6} >= 1 (pass the non-unique override to solve anyway)")]
    NotUnique { lambda: f64 },

    #[error("fixed point did not converge after {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("identification condition fails: {0}")]
    Identification(String),

    #[error("second-stage rank condition fails: {0}")]
    RankCondition(String),

    #[error("optimizer did not converge after {iterations} iterations: {trace}")]
    OptimizerFailed { iterations: usize, trace: String },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("too many failed replications: {failed} of {reps}")]
    TooManyFailures { failed: usize, reps: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
