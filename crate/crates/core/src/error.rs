//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by data handling, samplers and post-processing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}, column {col}: {detail}")]
    Parse { row: usize, col: usize, detail: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("degenerate column `{name}`: {detail}")]
    DegenerateColumn { name: String, detail: String },

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("matrix factorization failed: {0}")]
    Factorization(String),

    #[error("shrinkage condition violated: alpha2 = {alpha2} must exceed beta2 + 1 = {limit}")]
    ShrinkageCondition { alpha2: f64, limit: f64 },

    #[error("categorical draw has no support (all log-weights are -inf)")]
    NoSupport,

    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("criterion mismatch: {0}")]
    CriterionMismatch(String),

    #[error("need at least {need} samples, got {got}")]
    InsufficientSamples { need: usize, got: usize },

    #[error("mcmc failure at iteration {iter}: {detail}")]
    Mcmc { iter: usize, detail: String },

    #[error("trace error: {0}")]
    Trace(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
