use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("unsupported channel count {0} (expected 1, 3 or 4)")]
    UnsupportedChannels(usize),

    #[error("rect {rect} does not fit in {width}x{height}")]
    OutOfBounds {
        rect: crate::Rect,
        width: usize,
        height: usize,
    },

    #[error("rect {0} is too small for a 3x3 cell partition")]
    UndersizedRect(crate::Rect),

    #[error("rect {rect} is incompatible with haar template {template}")]
    IncompatibleTemplate {
        rect: crate::Rect,
        template: crate::HaarTemplate,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training sample set must contain both classes")]
    SingleClass,

    #[error("feature pool exhausted: no weak classifier with weighted error below 0.5")]
    PoolExhausted,

    #[error("format error: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (files, configuration),
    /// as opposed to training outcomes or internal failures.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidImage(_)
                | Error::UnsupportedChannels(_)
                | Error::Config(_)
                | Error::Format(_)
                | Error::Io { .. }
                | Error::Decode { .. }
                | Error::Json(_)
                | Error::Csv(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
