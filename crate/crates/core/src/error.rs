use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("box mismatch: {0}")]
    BoxMismatch(String),

    #[error("operator is not unitary (max |U*U - I| = {defect:e})")]
    NotUnitary { defect: f64 },

    #[error("linear solve failed: {reason} (residual {residual:e})")]
    Solve { reason: String, residual: f64 },

    #[error("eigenvalue tracking failed: {0}")]
    Tracking(String),

    #[error("degenerate eigenvalue: gap {gap:e} below tolerance")]
    Degenerate { gap: f64 },

    #[error("numeric overflow: {0}")]
    Overflow(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}

pub(crate) fn geometry<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Geometry(msg.into()))
}
