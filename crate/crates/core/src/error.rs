use std::path::PathBuf;

use crate::tensor::Shape;

pub type Result<T> = std::result::Result<T, PdsError>;

#[derive(Debug, thiserror::Error)]
pub enum PdsError {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: Shape, actual: Shape },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("noise level must be positive, got {0}")]
    NonPositiveSigma(f64),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("chain {chain} diverged at iteration {iteration}")]
    Divergence { chain: usize, iteration: usize },

    #[error("extrapolated alpha out of range at T={t}: transformed value {y} is not positive")]
    AlphaOutOfRange { t: usize, y: f64 },

    #[error("{path}: bad magic bytes {found:?}")]
    BadMagic { path: PathBuf, found: [u8; 4] },

    #[error("{path}: unsupported format version {found} (expected {expected})")]
    VersionMismatch { path: PathBuf, found: u16, expected: u16 },

    #[error("{path}: truncated file, expected {expected} bytes, found {actual}")]
    Truncated { path: PathBuf, expected: usize, actual: usize },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: shape {actual} does not match expected {expected}")]
    FileShapeMismatch { path: PathBuf, expected: Shape, actual: Shape },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl PdsError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PdsError::Io { path: path.into(), source }
    }
}
