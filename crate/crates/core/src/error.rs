use std::io;
use std::path::PathBuf;

/// Every failure the library can report. The CLI maps each variant onto a
/// stable exit code (see [`Error::exit_code`]).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("non-finite value in {block}")]
    NonFinite { block: String },

    #[error("numeric divergence at epoch {epoch}, batch {batch}: loss is {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("state error: {0}")]
    State(String),

    #[error("checkpoint integrity error: {0}")]
    Integrity(String),

    #[error("report schema error in {path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(
        context: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class.
    ///
    /// | code | meaning |
    /// |------|---------|
    /// | 1 | i/o or internal state |
    /// | 2 | usage / config |
    /// | 3 | data, parse or shape |
    /// | 4 | numeric divergence |
    /// | 5 | checkpoint integrity |
    /// | 6 | report schema |
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Argument(_) => 2,
            Error::Data(_) | Error::Parse { .. } | Error::Shape { .. } => 3,
            Error::Divergence { .. } | Error::NonFinite { .. } => 4,
            Error::Integrity(_) => 5,
            Error::Schema { .. } => 6,
            Error::Io { .. } | Error::State(_) => 1,
        }
    }
}
