use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("time {t} lies outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("form and projection live on different spaces")]
    SpaceMismatch,

    #[error("step system is singular at step {step}")]
    SingularStep { step: usize },

    #[error("internal inconsistency: {0}")]
    Inconsistent(String),

    #[error("audit refused: {0}")]
    AuditRefused(String),

    #[error("audit failed: {0}")]
    AuditFailed(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("quadrature did not converge (max entry change {change:e})")]
    QuadratureNonconvergence { change: f64 },

    #[error("inner iteration stalled at lambda = {lambda} (residual {residual:e})")]
    MaxIterations { lambda: f64, residual: f64 },

    #[error("iterate reached radius {radius} >= R0 = {outer} at lambda = {lambda}")]
    BoundaryHit { lambda: f64, radius: f64, outer: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
