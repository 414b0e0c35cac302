//! Error type shared across the crate.

use thiserror::Error;

/// Errors surfaced while validating data, fitting the propensity model, or
/// estimating survival curves and their standard errors.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset contains no records")]
    EmptyDataset,

    #[error("record {index}: covariate vector has length {found}, expected {expected}")]
    InconsistentCovariateLength {
        index: usize,
        found: usize,
        expected: usize,
    },

    #[error("record {index}: {field} must be 0 or 1, found {value}")]
    NonBinaryIndicator {
        index: usize,
        field: &'static str,
        value: f64,
    },

    #[error("record {index}: time must be finite and nonnegative, found {value}")]
    NegativeTime { index: usize, value: f64 },

    #[error("record {index}: covariate {column} is not finite")]
    NonFiniteCovariate { index: usize, column: usize },

    #[error("tied failure times at {times:?}; enable tie jitter or perturb the input")]
    TiedFailureTimes { times: Vec<f64> },

    #[error("record {index}: first covariate must be the constant 1")]
    MissingInterceptColumn { index: usize },

    #[error("file not found: {path}")]
    FileNotFound { path: String },

    #[error("row {row}, column {column}: {message}")]
    ParseError {
        row: usize,
        column: String,
        message: String,
    },

    #[error("column '{name}' not present in the header")]
    MissingColumn { name: String },

    #[error("treatment appears separated: coefficient norm exceeded {cap} after {iterations} iterations with score norm {score_norm:e}")]
    Separation {
        cap: f64,
        iterations: usize,
        score_norm: f64,
    },

    #[error("information matrix is singular or not positive definite")]
    SingularInformation,

    #[error("no convergence after {0} iterations")]
    MaxIterationsExceeded(usize),

    #[error("weight is not finite (linear predictor overflow)")]
    NonFiniteWeight,

    #[error("arm {arm} has no subjects")]
    EmptyArm { arm: u8 },

    #[error("degenerate risk set: survival factor below zero at time {time}")]
    DegenerateRiskSet { time: f64 },

    #[error("time {t} is outside the curve domain [0, {domain_end}]")]
    UndefinedBeyondLastRisk { t: f64, domain_end: f64 },

    #[error("evaluation time {t} is beyond the last risk time {domain_end} in arm {arm}")]
    TimeBeyondRiskSupport { t: f64, domain_end: f64, arm: u8 },

    #[error("at least two subjects are required")]
    InsufficientSample,

    #[error("confidence level must lie strictly between 0 and 1, got {0}")]
    InvalidLevel(f64),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("{failures} of {total} resamples or replications failed (more than 5%)")]
    ExcessiveFailures { failures: usize, total: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
