use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({0}, {1}) lies outside the domain")]
    Domain(f64, f64),
    #[error("coincident points at ({0}, {1})")]
    Coincident(f64, f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("covariance not positive definite: smallest eigenvalue {0:e}")]
    NotPositiveDefinite(f64),
    #[error("numerical overflow: {0}")]
    Overflow(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("query outside footprint: {0}")]
    OutOfFootprint(String),
    #[error("resolution too coarse: {0}")]
    Resolution(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("bad file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}
