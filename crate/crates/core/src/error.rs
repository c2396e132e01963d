use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid knots: {0}")]
    InvalidKnots(String),
    #[error("age {age} lies outside the basis support [{lo}, {hi}]")]
    AgeOutOfSupport { age: f64, lo: f64, hi: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("cluster label {0} does not exist")]
    InvalidCluster(usize),
    #[error("index out of range: {0}")]
    InvalidIndex(String),
    #[error("cell (i={i}, x={x}, t={t}) is missing")]
    MissingData { i: usize, x: usize, t: usize },
    #[error("invalid LOESS span: {0}")]
    InvalidSpan(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("no posterior draws available")]
    NoDraws,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("invalid model state: {0}")]
    InvalidState(String),
    #[error("ingest error: {0}")]
    Ingest(String),
    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Coarse classification used by front ends to pick exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidKnots(_)
            | Error::InvalidSpan(_)
            | Error::InvalidInput(_)
            | Error::InvalidCluster(_)
            | Error::InvalidIndex(_) => ErrorKind::Config,
            Error::Numeric(_) | Error::InvalidState(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}
