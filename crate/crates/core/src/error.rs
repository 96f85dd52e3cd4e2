use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// The observation has zero probability under the belief being conditioned.
    /// `index` is the position in the sequence when a sequence was being folded.
    #[error("observation has zero probability under the belief{}", match .index { Some(i) => format!(" (sequence index {i})"), None => String::new() })]
    ZeroProbabilityObservation { index: Option<usize> },

    #[error("invalid state index {0}")]
    InvalidState(usize),

    #[error("observation ({state}, {action}) is outside the non-zero-probability alphabet")]
    UnknownObservation { state: usize, action: usize },

    #[error("LP backend failure: {0}")]
    Lp(String),

    #[error("machine does not match game: {0}")]
    Mismatch(String),

    #[error("policy iteration did not converge after {0} improvement steps")]
    NonConvergence(usize),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid game: {0}")]
    InvalidGame(String),

    #[error("script error at index {index}: {message}")]
    Script { index: usize, message: String },

    #[error("empty trace")]
    EmptyTrace,

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
