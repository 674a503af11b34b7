use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("column {column} has norm {norm} (expected unit norm)")]
    UnnormalizedColumn { column: usize, norm: f64 },

    #[error("weight column {column} violates w_i^T s_i = 1 by {violation:e}")]
    InfeasibleWeight { column: usize, violation: f64 },

    #[error("zadoff-chu budget exceeded: {requested} columns requested, {available} available with base length {base_len}")]
    ZadoffChuBudget {
        requested: usize,
        available: usize,
        base_len: usize,
    },

    #[error("matrix is rank deficient (smallest singular value {sigma_min:e})")]
    RankDeficient { sigma_min: f64 },

    #[error("sparsity condition violated: 2*mu*s - mu = {factor} is not in (0, 1)")]
    SparsityCondition { factor: f64 },

    #[error("linear program for column {column} failed: {message}")]
    LinearProgram { column: usize, message: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("training diverged at stage {stage} ({phase}), step {step}: loss = {loss}")]
    Diverged {
        stage: usize,
        phase: &'static str,
        step: usize,
        loss: f64,
    },

    #[error("architecture mismatch: expected {expected}, got {actual}")]
    WrongArchitecture {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("trace does not match parameters: {0}")]
    StaleTrace(String),

    #[error("container error in {path}: {message}")]
    Container { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
