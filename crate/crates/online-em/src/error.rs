//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised by model-level operations (validation, E/M-steps).
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("statistic outside the M-step domain: {0}")]
    OutOfDomain(String),
    #[error("degenerate component {component}: {reason}")]
    DegenerateComponent { component: usize, reason: String },
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

/// Errors raised while running an estimator over a data stream.
#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("empty data stream")]
    EmptyStream,
    #[error("stream exhausted before warmup: needed {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("initial statistic required: warmup {warmup} is below the model minimum {min_warmup} and no s0 was supplied")]
    MissingInitialStat { warmup: usize, min_warmup: usize },
    #[error("domain failure at step {step}: {source}")]
    DomainFailure {
        step: usize,
        #[source]
        source: ModelError,
    },
    #[error("Titterington update left the parameter space at step {step} (non-positive intensity)")]
    TitteringtonInvalid { step: usize },
    #[error("averaging start {n0} out of range (warmup {warmup}, last step {last})")]
    AveragingRange { n0: usize, warmup: usize, last: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Errors raised by the asymptotics toolkit.
#[derive(Debug, Error)]
pub enum AsymptoticsError {
    #[error("matrix is not stable: largest eigenvalue real part {max_re} >= 0")]
    NotStable { max_re: f64 },
    #[error("matrix is not symmetric positive semidefinite: {0}")]
    NotPsd(String),
    #[error("singular matrix in {0}")]
    Singular(String),
    #[error("Lyapunov residual {residual} exceeds tolerance {tol}")]
    ResidualTooLarge { residual: f64, tol: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}
