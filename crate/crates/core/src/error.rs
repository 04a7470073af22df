use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("invalid state spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("lambda {lambda} exceeds the achievable supremum {supremum} for these dimensions")]
    LambdaOutOfRange { lambda: f64, supremum: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("rescaled time is undefined at lambda = 0; use iteration counts directly")]
    UndefinedRescaling,
    #[error("matrix is not unitary: max |U^dag U - 1| = {residual:e}")]
    NonUnitary { residual: f64 },
    #[error("eigensolver failed for realization {seed_tag}: {message}")]
    Eigensolver { seed_tag: String, message: String },
    #[error("degenerate spectrum: min gap {min_gap:e} below threshold {threshold:e}")]
    DegenerateSpectrum { min_gap: f64, threshold: f64 },
    #[error("insufficient sampling: {distinct} distinct iteration counts, need at least {required}")]
    InsufficientSampling { distinct: usize, required: usize },
    #[error("undefined measure: {0}")]
    UndefinedMeasure(String),
    #[error("quadrature did not converge: estimated error {achieved:e} > tolerance {tolerance:e}")]
    Quadrature { achieved: f64, tolerance: f64 },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}
