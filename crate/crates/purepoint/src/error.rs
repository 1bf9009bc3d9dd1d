//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Cloud has no spatial extent (all points identical) or is otherwise unusable.
    #[error("degenerate point cloud: {0}")]
    DegenerateCloud(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Text-format parse failure with a 1-based line number.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("archive error: {0}")]
    Archive(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("attack error: {0}")]
    Attack(String),

    #[error("config error: {0}")]
    Config(String),

    /// NaN or infinity showed up where a finite value is required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
