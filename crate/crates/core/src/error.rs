use thiserror::Error;

/// Errors raised by the code, memory, encoding and simulation modules.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    Dimension {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("symbol {symbol} outside alphabet of size {alphabet}")]
    Alphabet { symbol: usize, alphabet: usize },

    #[error("no active location: every address similarity fell below threshold")]
    NoActiveLocation,

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("snapshot format: {0}")]
    Format(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
