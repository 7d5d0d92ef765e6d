use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("point is behind the camera (depth {0:.6} m)")]
    BehindCamera(f64),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("grid lattices are misaligned by {offset:.3e} cells")]
    Misaligned { offset: f64 },

    #[error("missing metadata field `{field}` in {path}")]
    MissingField { path: PathBuf, field: &'static str },

    #[error("malformed {what} in {path}: {reason}")]
    Malformed {
        path: PathBuf,
        what: &'static str,
        reason: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {reason}")]
    Stage { stage: String, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
