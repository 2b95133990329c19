use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid camera pose: {0}")]
    InvalidPose(String),
    #[error("invalid pose grid: {0}")]
    InvalidGrid(String),
    #[error("invalid texture: {0}")]
    InvalidTexture(String),
    #[error("cannot draw {requested} poses from a list of {available}")]
    NotEnoughPoses { requested: usize, available: usize },
    #[error("cannot build a texel index from an empty point set")]
    EmptyIndex,
    #[error("empty gradient batch")]
    EmptyBatch,
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("image {width}x{height} is smaller than the {min}x{min} receptive field")]
    ImageTooSmall {
        width: usize,
        height: usize,
        min: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed image file: {0}")]
    Image(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
