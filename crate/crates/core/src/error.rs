use thiserror::Error;

/// Errors raised by the laboratory. Refusals carry a human-readable diagnostic.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("point outside the phase domain: {0}")]
    Domain(String),
    #[error("sphere chart is singular at the poles: {0}")]
    Chart(String),
    #[error("integration failed at t = {t_last}: {reason}")]
    Integration { t_last: f64, reason: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("refused: {0}")]
    Refused(String),
    #[error("singular matrix: {0}")]
    Singular(String),
}

pub type Result<T> = std::result::Result<T, LabError>;
