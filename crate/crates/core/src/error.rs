use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the rectification toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("range error: {0}")]
    Range(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("input too small: {0}")]
    TooSmall(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("indeterminate shift: {0}")]
    IndeterminateShift(String),

    #[error("weight format error{}: {message}", layer.map(|l| format!(" (layer {l})")).unwrap_or_default())]
    WeightFormat { layer: Option<usize>, message: String },

    #[error("frame directory error in {}: {message}", path.display())]
    FrameDirectory { path: PathBuf, message: String },

    #[error("missing resource: {}", .0.display())]
    MissingResource(PathBuf),

    #[error("interpolator plugin failed: {0}")]
    Plugin(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("scene spec error: {0}")]
    Scene(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
