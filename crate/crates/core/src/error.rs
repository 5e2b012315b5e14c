use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("degenerate diffusion: sigma_grad = 0 gives infinite inverse temperature")]
    DegenerateDiffusion,

    #[error("empty trace")]
    EmptyTrace,

    #[error("staleness {tau} exceeds history cap {cap}")]
    HistoryCapExceeded { tau: usize, cap: usize },

    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },

    #[error("the moment oracle only covers the unperturbed model (epsilon = 0)")]
    PerturbedOracle,

    #[error("P is not positive definite: C = {c}, C_hat^2 = {c_hat_sq}")]
    NotPositiveDefinite { c: f64, c_hat_sq: f64 },

    #[error("no certificate found for delta = {delta}")]
    NoCertificate { delta: f64 },

    #[error("field is not mean-zero (c00 = {0})")]
    NotMeanZero(f64),

    #[error("hermite fields use different measures or truncation")]
    MeasureMismatch,

    #[error("truncation overflow: {0:e} of leading-mode mass dropped")]
    TruncationOverflow(f64),

    #[error("null space not one-dimensional within tolerance (second singular value {0:e})")]
    NullSpace(f64),

    #[error("numerical instability: {0}")]
    Instability(String),

    #[error("nonpositive sample in fit window at t = {0}")]
    NonPositiveSample(f64),

    #[error("insufficient points in fit window: {0}")]
    InsufficientPoints(usize),

    #[error("target {target:e} not reached within horizon")]
    TargetNotReached { target: f64 },

    #[error("config not found: {}", .0.display())]
    ConfigNotFound(PathBuf),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
