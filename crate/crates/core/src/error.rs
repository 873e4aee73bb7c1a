use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// The variants are deliberately flat so the C ABI can map each one to a
/// stable integer code (see `Error::code`).
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("singular matrix: pivot {pivot:e} at column {column}")]
    SingularMatrix { column: usize, pivot: f64 },
    #[error("standard deviation must be non-negative, got {0}")]
    InvalidStd(f64),
    #[error("generator spec out of range: {0}")]
    SpecOutOfRange(String),
    #[error("standardizer has zero standard deviation")]
    ZeroStd,
    #[error("nearest-neighbour corpus is empty")]
    EmptyCorpus,
    #[error("CFL violated: dt {dt:e} exceeds stable limit {limit:e}")]
    CflViolation { dt: f64, limit: f64 },
    #[error("acquisition geometry out of bounds: {0}")]
    GeometryOutOfBounds(String),
    #[error("gather has zero signal power")]
    ZeroSignal,
    #[error("incompatible dimensions: {0}")]
    IncompatibleDims(String),
    #[error("backward called without a matching forward cache")]
    StaleCache,
    #[error("mean-field inference did not reach tol {tol:e} in {iters} sweeps (last delta {delta:e})")]
    NonConvergence { iters: usize, tol: f64, delta: f64 },
    #[error("ground truth must be strictly positive")]
    NonPositiveTruth,
    #[error("prediction must be strictly positive")]
    NonPositivePred,
    #[error("dataset has {have} samples, need at least {need}")]
    DatasetTooSmall { have: usize, need: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Bincode(#[from] bincode::Error),
}

impl Error {
    /// Stable numeric code, exported through the C ABI. Zero is reserved for
    /// success.
    pub fn code(&self) -> i32 {
        match self {
            Error::ShapeMismatch(_) => 1,
            Error::SingularMatrix { .. } => 2,
            Error::InvalidStd(_) => 3,
            Error::SpecOutOfRange(_) => 4,
            Error::ZeroStd => 5,
            Error::EmptyCorpus => 6,
            Error::CflViolation { .. } => 7,
            Error::GeometryOutOfBounds(_) => 8,
            Error::ZeroSignal => 9,
            Error::IncompatibleDims(_) => 10,
            Error::StaleCache => 11,
            Error::NonConvergence { .. } => 12,
            Error::NonPositiveTruth => 13,
            Error::NonPositivePred => 14,
            Error::DatasetTooSmall { .. } => 15,
            Error::InvalidArgument(_) => 16,
            Error::Format(_) => 17,
            Error::Io(_) => 18,
            Error::Json(_) | Error::Bincode(_) => 19,
        }
    }
}
