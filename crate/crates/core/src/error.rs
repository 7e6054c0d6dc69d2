use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid clip {clip_id}: {reason}")]
    InvalidClip { clip_id: String, reason: String },

    #[error("invalid label space: {0}")]
    InvalidLabelSpace(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("singular homography")]
    SingularHomography,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("unknown class label {token:?} at {location}")]
    UnknownLabel { token: String, location: String },

    #[error("fusion: {0}")]
    Fusion(String),

    #[error("evaluation: {0}")]
    Evaluation(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("missing modality cache entry {0}")]
    MissingCache(PathBuf),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

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

    #[error("json error in {location}: {source}")]
    Json {
        location: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(location: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json { location: location.into(), source }
    }

    /// Short stable identifier, used for machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidClip { .. } => "invalid_clip",
            Error::InvalidLabelSpace(_) => "invalid_label_space",
            Error::Shape(_) => "shape",
            Error::SingularHomography => "singular_homography",
            Error::Config(_) => "config",
            Error::Parse { .. } => "parse",
            Error::UnknownLabel { .. } => "unknown_label",
            Error::Fusion(_) => "fusion",
            Error::Evaluation(_) => "evaluation",
            Error::Diverged { .. } => "diverged",
            Error::MissingCache(_) => "missing_cache",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::Json { .. } => "json",
        }
    }
}
