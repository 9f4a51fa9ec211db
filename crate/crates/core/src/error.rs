use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("matrix is not symmetric (entry ({row}, {col}))")]
    NotSymmetric { row: usize, col: usize },
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite input in {0}")]
    NonFiniteInput(&'static str),
    #[error("ridge regularizer must be positive, got {0}")]
    InvalidLambda(f64),
    #[error("decision set is empty")]
    EmptyDecisionSet,
    #[error("history is empty")]
    EmptyHistory,
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("standard deviation must be positive (coordinate {0})")]
    NonPositiveSigma(usize),
    #[error("invalid count or scale: {0}")]
    InvalidCount(&'static str),
    #[error("operation requires a discrete (softmax) policy")]
    UnsupportedForLinear,
    #[error("linear system is singular")]
    SingularSystem,
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("io error: {0}")]
    Io(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn dims(context: &'static str, expected: usize, got: usize) -> Self {
        Error::DimMismatch {
            context,
            expected,
            got,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
