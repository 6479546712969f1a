use std::io;
use std::path::{Path, PathBuf};

use responder_core::Error as CoreError;

/// Exit code for bad input: flags, config values, missing or malformed files.
pub const EXIT_VALIDATION: i32 = 1;
/// Exit code for failures while doing the work: IO, numerical breakdown.
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("{0}")]
    Validation(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{0}")]
    Runtime(String),
}

pub type Result<T> = std::result::Result<T, BenchError>;

impl BenchError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, message: impl ToString) -> Self {
        Self::Format { path: path.to_path_buf(), message: message.to_string() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) | Self::Format { .. } => EXIT_VALIDATION,
            Self::Core(CoreError::InvalidInput(_) | CoreError::Shape(_) | CoreError::InsufficientData(_)) => {
                EXIT_VALIDATION
            }
            Self::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => EXIT_VALIDATION,
            Self::Core(_) | Self::Io { .. } | Self::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

macro_rules! validation {
    ($($arg:tt)*) => {
        $crate::error::BenchError::Validation(format!($($arg)*))
    };
}
pub(crate) use validation;
