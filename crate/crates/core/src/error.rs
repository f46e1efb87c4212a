use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("reference point cloud is empty")]
    EmptyReference,

    #[error("requested {requested} neighbors but only {available} are usable")]
    NotEnoughNeighbors { requested: usize, available: usize },

    #[error("only {inliers} weighted correspondences, need at least {required}")]
    DegenerateCorrespondences { inliers: usize, required: usize },

    #[error("weighted correspondences are collinear (rank of the cross-covariance < 2)")]
    DegenerateGeometry,

    #[error("cloud has {size} points, supported range is [{min}, {max}]")]
    CloudSize { size: usize, min: usize, max: usize },

    #[error("rank-deficient point cloud (smallest singular value {0:e})")]
    RankDeficient(f64),

    #[error("invalid diagonal: {0}")]
    InvalidDiagonal(String),

    #[error("sinkhorn trace does not match the backward call: {0}")]
    TraceMismatch(String),

    #[error("descent diverged at step {step}")]
    Diverged {
        step: usize,
        trajectory: Vec<crate::losses::LossReport>,
    },

    #[error("unknown shape kind `{0}`")]
    UnknownShape(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
