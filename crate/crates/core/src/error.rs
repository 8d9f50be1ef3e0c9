use thiserror::Error;

/// Errors raised across the privacy loop.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("power iteration did not converge after {iterations} iterations")]
    Convergence { iterations: usize },

    #[error("synthesis vector has zero total mass")]
    ZeroMass,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("training diverged at step {step}: {what}")]
    Divergence { step: usize, what: String },

    #[error("infeasible block selection: {constraint} budget {budget:.3} below the smallest achievable {minimum:.3}")]
    Infeasible {
        constraint: &'static str,
        budget: f64,
        minimum: f64,
    },

    #[error("infeasible block selection: no plan fits memory {memory:.3} and latency {latency:.3} together")]
    JointlyInfeasible { memory: f64, latency: f64 },

    #[error("value {value} outside domain [{lower}, {upper}]")]
    OutOfDomain { value: f64, lower: f64, upper: f64 },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("transport failure after {attempts} attempts: {reason}")]
    Transport { attempts: usize, reason: String },

    #[error("invalid file format: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
