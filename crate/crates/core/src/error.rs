use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate rotation: quaternion has zero norm")]
    DegenerateRotation,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("Gaussian cloud is empty")]
    EmptyCloud,
    #[error("cannot build a histogram of an empty cloud")]
    EmptyHistogram,
    #[error("pruning would remove every Gaussian")]
    PruneAll,
    #[error("contributor records are stale: the cloud changed since the forward pass")]
    StaleRecords,
    #[error("volume has no zero crossing; mesh is empty")]
    EmptyMesh,
    #[error("unsupported surface descriptor: {0}")]
    UnsupportedDescriptor(String),
    #[error("unsupported scene kind: {0}")]
    UnsupportedScene(String),
    #[error("no views to evaluate")]
    EmptyViews,
    #[error("non-finite loss at iteration {iteration} (diagnostic snapshot: {snapshot:?})")]
    NonFiniteLoss { iteration: usize, snapshot: Option<PathBuf> },
    #[error("PLY: missing property `{0}`")]
    MissingProperty(String),
    #[error("PLY: {0}")]
    Ply(String),
    #[error("camera: {0}")]
    Camera(String),
    #[error("I/O error on {path:?}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
