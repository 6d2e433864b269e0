use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
///
/// The CLI maps each variant onto an exit code via [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{what} out of range: {value} not in [{min}, {max}]")]
    Bounds {
        what: &'static str,
        value: usize,
        min: usize,
        max: usize,
    },

    #[error("sequence too short: valid length {len} < window width {width}")]
    SequenceTooShort { len: usize, width: usize },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("frozen model violation: {0}")]
    Frozen(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("seed {seed}: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 = usage, 2 = data, 3 = verification.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Seed { source, .. } => source.exit_code(),
            Error::Usage(_) | Error::Dimension { .. } | Error::Bounds { .. } => 1,
            Error::Verification(_) | Error::Frozen(_) => 3,
            _ => 2,
        }
    }
}
