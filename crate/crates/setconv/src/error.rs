use std::io;
use std::path::PathBuf;

use crate::checkpoint::CheckpointError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("corpus {path}: {reason}")]
    Corpus { path: PathBuf, reason: String },
    #[error("checkpoint {path}: {source}")]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: CheckpointError,
    },
    #[error(transparent)]
    Core(#[from] setconv_core::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Process exit statuses of the command line.
pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const DATA: i32 = 3;
    pub const DIVERGED: i32 = 4;
    pub const ABORTED: i32 = 5;
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corpus(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Corpus {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        use setconv_core::Error as E;
        match self {
            Error::Io { .. } | Error::Csv(_) => exit::IO,
            Error::Config(_) => exit::CONFIG,
            Error::Corpus { .. } | Error::Checkpoint { .. } => exit::DATA,
            Error::Core(e) => match e {
                E::Diverged { .. } | E::NonFiniteGradient(_) => exit::DIVERGED,
                E::Data(_) | E::LabelOutOfRange { .. } | E::EmptySet(_) | E::UndefinedMetric(_) => exit::DATA,
                E::InvalidModel { .. } | E::InvalidArgument { .. } | E::ShapeMismatch { .. } | E::NonScalarRoot(_) => {
                    exit::CONFIG
                }
            },
        }
    }
}
