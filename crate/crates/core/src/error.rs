use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("pitch {pitch} rad violates the look-at guard |pitch| <= pi/2 - {guard}")]
    DegeneratePitch { pitch: f64, guard: f64 },

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("matrix is not a rotation (orthonormality error {error:.3e}, det {det:.6})")]
    NotARotation { error: f64, det: f64 },

    #[error("point is behind the camera (z = {z:.3e})")]
    BehindCamera { z: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("bad primitive parameters: {0}")]
    BadParams(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("camera distance {d} is inside the object's bounding sphere (radius {radius})")]
    CameraInsideObject { d: f64, radius: f64 },

    #[error("target silhouette is empty")]
    EmptyTarget,

    #[error("bad sampling ranges: {0}")]
    BadRanges(String),

    #[error("task {0} needs a background plate but the pair has none")]
    MissingBackground(&'static str),

    #[error("non-finite value encountered{}", match .step { Some(s) => format!(" at step {s}"), None => String::new() })]
    NonFinite { step: Option<usize> },

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("missing outputs for ids: {}", .0.join(", "))]
    MissingOutput(Vec<String>),

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
