use thiserror::Error;

/// Errors produced by network construction, model evaluation, and solves.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NewtonFailure { iterations: usize, residual: f64 },

    #[error("simulation step {step} failed: {reason}")]
    SimulationStep { step: usize, reason: String },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("solver finished with non-optimal status: {0}")]
    NonOptimal(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
