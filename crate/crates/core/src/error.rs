//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A query time fell outside the span of a sample stream.
    #[error("time {t} s outside stream span [{start} s, {end} s]")]
    OutOfRange { t: f64, start: f64, end: f64 },

    /// A sample stream was empty or otherwise unusable for interpolation.
    #[error("degenerate stream: {0}")]
    DegenerateStream(String),

    /// Malformed on-disk data, with file and (where known) line context.
    #[error("{path}{}: {message}", line.map(|l| format!(":{l}")).unwrap_or_default())]
    Format {
        path: String,
        line: Option<usize>,
        message: String,
    },

    /// An operation that requires at least one element received none.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// Tensor or grid dimensions do not match what the operation expects.
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    /// Dataset-level inconsistency (mixed shapes, bad labels).
    #[error("data error: {0}")]
    Data(String),

    /// A value outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Too few observations for a statistic.
    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    /// Required table cells are absent.
    #[error("missing data: {0}")]
    MissingData(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<String>, line: impl Into<Option<usize>>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line: line.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by configuration rather than input data.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
