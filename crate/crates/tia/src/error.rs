use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TiaError {
    #[error(transparent)]
    Core(#[from] tia_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Wav { path: PathBuf, source: hound::Error },
    #[error("{}: invalid MIDI file: {msg}", path.display())]
    Midi { path: PathBuf, msg: String },
    #[error("{}:{line}: {msg}", path.display())]
    Csv {
        path: PathBuf,
        line: u64,
        msg: String,
    },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("incompatible model: {0}")]
    IncompatibleModel(String),
    #[error("{}: unrecognized file format: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, TiaError>;

impl TiaError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TiaError::Io {
            path: path.into(),
            source,
        }
    }

    /// 3 for numeric failures, 2 for everything a user can fix by changing
    /// arguments, config or inputs.
    pub fn exit_code(&self) -> i32 {
        match self {
            TiaError::Core(tia_core::Error::Divergence { .. }) => 3,
            _ => 2,
        }
    }
}
