use thiserror::Error;

/// Errors surfaced by the solver, the particle simulator and their plumbing.
#[derive(Debug, Error)]
pub enum MfgError {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite value {what} at {location}")]
    NonFinite { what: String, location: String },

    #[error("model hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("grid too coarse: {0}")]
    ResolutionTooCoarse(String),

    #[error("iteration did not converge: {0}")]
    NotConverged(String),

    #[error("positivity floor breached: {0}")]
    PositivityLost(String),

    #[error("inadmissible control: {0}")]
    Inadmissible(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MfgError>;
