use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("quadrature did not converge: achieved error {achieved:.3e}, requested {requested:.3e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("degenerate triangle {index} (area {area:.3e})")]
    DegenerateTriangle { index: usize, area: f64 },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix not SPD: non-positive pivot {value:.3e} at index {pivot}")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("AR2 precondition violated: {0}")]
    Ar2Precondition(String),

    #[error("point {index} lies outside the domain")]
    OutsideDomain { index: usize },

    #[error("eigen-decomposition failed: {0}")]
    Eigen(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}
