use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EpError {
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("invalid profile: {0}")]
    InvalidProfile(String),

    #[error("radius {beta} outside sampled range [{min}, {max}]")]
    RadiusOutOfRange { beta: f64, min: f64, max: f64 },

    #[error("quadrature did not reach tolerance {tol:e} (estimate {estimate:e})")]
    QuadratureTolerance { tol: f64, estimate: f64 },

    #[error("zero density: {0} is undefined, route to the zero-density branch")]
    ZeroDensity(&'static str),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("root finding failed: {0}")]
    Root(String),

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("envelope construction failed: {0}")]
    Envelope(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for EpError {
    fn from(e: std::io::Error) -> Self {
        EpError::Io(e.to_string())
    }
}

impl From<csv::Error> for EpError {
    fn from(e: csv::Error) -> Self {
        EpError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for EpError {
    fn from(e: serde_json::Error) -> Self {
        EpError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, EpError>;
