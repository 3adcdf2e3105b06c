use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid run configuration (dimensions, budgets, parameter ranges).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller handed in a value outside the operation's domain.
    #[error("input error: {0}")]
    Input(String),

    /// Data-level problem with a suite or dataset (missing prediction, empty suite, ...).
    #[error("data error: {0}")]
    Data(String),

    #[error("parse error in {path} at byte offset {offset}: {message}")]
    Parse {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("corruption detected in {path}: {message}")]
    Corruption { path: PathBuf, message: String },

    /// Oracle peer failure after the configured number of attempts.
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("i/o error on {path}: {cause}")]
    Io {
        path: PathBuf,
        cause: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause: source,
        }
    }

    /// True for failures the fuzzer turns into a resumable abort.
    pub fn is_transport(&self) -> bool {
        matches!(self, Error::Transport { .. })
    }
}
