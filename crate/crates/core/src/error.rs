use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("horizon mismatch: expected {expected} days, found {found}")]
    HorizonMismatch { expected: usize, found: usize },

    #[error("compartment {compartment} became negative ({value:e}) on day {day}")]
    NegativeCompartment {
        day: usize,
        compartment: &'static str,
        value: f64,
    },

    #[error("no records")]
    NoRecords,

    #[error("missing column {0:?}")]
    MissingColumn(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("configuration: {0}")]
    Config(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse failure class, stable across releases. The CLI maps it to exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Numerical,
    Optimization,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::NonFinite(_) | Error::NegativeCompartment { .. } => ErrorKind::Numerical,
            Error::Optimization(_) => ErrorKind::Optimization,
            _ => ErrorKind::Input,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Input => 2,
            ErrorKind::Numerical => 3,
            ErrorKind::Optimization => 4,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
