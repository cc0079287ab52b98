use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported dimension {0}; only 2 and 3 are supported")]
    UnsupportedDimension(usize),

    #[error("no quadrature rule of degree {requested} (table covers degrees 1..={max})")]
    UnsupportedDegree { requested: usize, max: usize },

    #[error("quadrature degree {available} is below the integrand degree {required}")]
    InsufficientDegree { required: usize, available: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("degenerate element {cell}: det J = {det:e}")]
    DegenerateElement { cell: usize, det: f64 },

    #[error("invalid kernel configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: usize, len: usize },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("verification failed: {0}")]
    VerificationFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
