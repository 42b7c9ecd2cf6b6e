use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the toolkit's operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("span length {len} outside [1, {max}]")]
    SpanTooLong { len: usize, max: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("sequence length {0} exceeds the brute-force oracle limit of {MAX_ORACLE_LEN}")]
    TooLargeForOracle(usize),

    #[error("target id {id} outside vocabulary of size {vocab}")]
    InvalidTarget { id: u32, vocab: usize },

    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("empty reference transcript (id {0})")]
    EmptyReference(String),

    #[error("frozen model violation: {0}")]
    FrozenViolation(String),

    #[error("division by zero: {0}")]
    DivisionByZero(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Hard cap on the exhaustive segmentation oracle.
pub const MAX_ORACLE_LEN: usize = 16;

impl Error {
    /// Stable machine-readable tag, used by the CLI error envelope.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InsufficientData(_) => "InsufficientData",
            Error::InvalidInput(_) => "InvalidInput",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::SpanTooLong { .. } => "SpanTooLong",
            Error::EmptyInput(_) => "EmptyInput",
            Error::TooLargeForOracle(_) => "TooLargeForOracle",
            Error::InvalidTarget { .. } => "InvalidTarget",
            Error::DegenerateVector(_) => "DegenerateVector",
            Error::EmptyReference(_) => "EmptyReference",
            Error::FrozenViolation(_) => "FrozenViolation",
            Error::DivisionByZero(_) => "DivisionByZero",
            Error::Format(_) => "FormatError",
            Error::Io(_) => "IoError",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(format!("json: {e}"))
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(format!("csv: {e}"))
    }
}
