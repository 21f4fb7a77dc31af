use thiserror::Error;

/// Errors raised anywhere in the belief-graph engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("exact enumeration over K={k} beliefs exceeds the limit of {limit}")]
    EnumerationLimit { k: usize, limit: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("embedding table is missing {count} required keys, first: {}", .first.join(", "))]
    MissingKeys { count: usize, first: Vec<String> },

    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("group y={group} has {n} samples, need at least 2")]
    InsufficientGroup { group: u8, n: usize },

    #[error("pooled standard deviation is zero")]
    ZeroPooledVariance,

    #[error("empty sequence: {0}")]
    EmptySequence(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("non-finite loss on trajectory {trajectory} at timestep {timestep}")]
    NonFinite { trajectory: String, timestep: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}
