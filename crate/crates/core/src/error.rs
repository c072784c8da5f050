use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A request the data cannot satisfy (pool smaller than k, too few classes, ...).
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid descriptor data: {0}")]
    InvalidData(String),

    /// A class ended up with no descriptors to build a prototype or pool from.
    #[error("degenerate class {class_index}: no descriptors available")]
    DegenerateClass { class_index: usize },

    #[error("degenerate statistics: need at least 2 values, got {0}")]
    DegenerateStatistics(usize),

    #[error("episode {index}: {source}")]
    Episode {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error in {path} at byte {offset}: {message}")]
    Parse {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_episode(self, index: usize) -> Self {
        Error::Episode {
            index,
            source: Box::new(self),
        }
    }
}
