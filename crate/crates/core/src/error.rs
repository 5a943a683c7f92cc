use thiserror::Error;

use crate::audio::AudioError;
use crate::eval::EvalError;
use crate::geom::GeomError;
use crate::nn::NnError;
use crate::visual::VisualError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-level error, wrapping each module's error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Visual(#[from] VisualError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn format(path: impl AsRef<std::path::Path>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().display().to_string(),
            message: message.into(),
        }
    }

    /// True for failures caused by non-finite values during training.
    pub fn is_numeric_failure(&self) -> bool {
        matches!(self, Error::Nn(NnError::NaNLoss { .. } | NnError::NonFinite(_)))
    }

    /// True for filesystem and container-format failures.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Format { .. }
                | Error::Audio(AudioError::FileNotFound(_))
                | Error::Audio(AudioError::BadWav(_))
                | Error::Nn(NnError::Io(_))
                | Error::Nn(NnError::BadMagic)
                | Error::Nn(NnError::Corrupt)
                | Error::Nn(NnError::VersionMismatch { .. })
        )
    }
}
