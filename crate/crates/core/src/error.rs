use thiserror::Error;

/// Errors raised by map evaluation, target construction and the estimators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("root finder did not converge for input {input} (residual {residual:e} after {iterations} iterations)")]
    NoConvergence {
        input: f64,
        residual: f64,
        iterations: usize,
    },
    #[error("point {point} left the domain [{lo}, {hi}] at step {step}")]
    Escaped {
        point: f64,
        step: u64,
        lo: f64,
        hi: f64,
    },
    #[error("index {index} out of range (valid: {lo}..={hi})")]
    Index { index: u64, lo: u64, hi: u64 },
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("{0}")]
    Unsupported(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
