use thiserror::Error;

/// Errors produced by the numerical routines.
#[derive(Debug, Error)]
pub enum FluctError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("tolerance {requested:e} not attainable: achievable error bound {achievable:e}")]
    ToleranceNotMet { requested: f64, achievable: f64 },

    #[error("CFL violation: dt = {dt:e} exceeds admissible {admissible:e}")]
    CflViolation { dt: f64, admissible: f64 },

    #[error("operation requires a separable interaction/test function: {0}")]
    SeparableRequired(String),

    #[error("critical exponent alpha = 1/2 unsupported: {0}")]
    CriticalAlpha(String),

    #[error("time {requested} outside covered range [0, {available}]")]
    TimeRange { requested: f64, available: f64 },

    #[error("nonpositive value {value} in log-log regression (point {index})")]
    NonPositiveValue { index: usize, value: f64 },

    #[error("{0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, FluctError>;
