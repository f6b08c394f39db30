use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("model file checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },

    #[error("unsupported model file version {0}")]
    UnsupportedVersion(u8),

    #[error("invalid arguments: {0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] kspc_core::Error),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Process exit code: 1 usage, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Core(e) if e.is_numerical() => 3,
            Error::Core(kspc_core::Error::InvalidParameter(_))
            | Error::Core(kspc_core::Error::OutOfRange { .. }) => 1,
            _ => 2,
        }
    }
}
