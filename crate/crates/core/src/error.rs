use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("distribution has {0} entries, at least 2 are required")]
    TooFewClasses(usize),

    #[error("probability entry {index} is {value}, expected a finite value >= 0")]
    InvalidProbability { index: usize, value: f64 },

    #[error("probabilities sum to {0}, expected 1 within 1e-9")]
    NotNormalized(f64),

    #[error("logit entry {index} is not finite ({value})")]
    NonFiniteLogit { index: usize, value: f64 },

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("support violation: q[{index}] = {q} but p[{index}] = {p} > 0")]
    SupportViolation { index: usize, p: f64, q: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },

    #[error("target class carries mass {0}; non-target distribution is undefined")]
    DegenerateNonTarget(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("optimizer did not converge: gradient norm {grad_norm:e} after {iterations} iterations")]
    NonConvergence { iterations: usize, grad_norm: f64 },

    #[error("{path}: line {line}: {message}")]
    MalformedRow {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}: file contains no data rows")]
    EmptyFile(PathBuf),

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
