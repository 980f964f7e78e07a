//! Crate-wide error type.
//!
//! Variants group into the three failure classes the CLI maps to exit
//! codes: input problems (bad arguments, malformed files, degenerate
//! geometry) exit 2, numerical failures (singular operators, diverging
//! training) exit 3, and compatibility mismatches (checkpoint vs config)
//! exit 4.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Caller violated an operation's contract (bad shape, bad range).
    #[error("usage: {0}")]
    Usage(String),

    /// Geometrically or numerically degenerate input (zero direction,
    /// empty scene, rx == tx, all-zero CSI).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A versor or operator that cannot be inverted.
    #[error("singular operator: {0}")]
    Singular(String),

    /// Training or evaluation produced non-finite numbers.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Checkpoint and model configuration do not match.
    #[error("incompatible: {0}")]
    Incompatible(String),

    /// Config or scene file failed schema validation.
    #[error("schema: {0}")]
    Schema(String),

    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit code table: 0 ok, 2 input, 3 numerical, 4 compatibility.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Degenerate(_) | Error::Schema(_) | Error::Io { .. } => 2,
            Error::Singular(_) | Error::Numerical(_) => 3,
            Error::Incompatible(_) => 4,
        }
    }
}
