use thiserror::Error;

/// Errors raised by the algebra, geometry and grid layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension n = {0} is not supported (need n >= 2)")]
    Dimension(usize),

    #[error("entry {0} is not finite")]
    NonFinite(usize),

    #[error("order k = {k} out of range 0..={n}")]
    OrderOutOfRange { k: usize, n: usize },

    #[error("index {index} out of range for n = {n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("index {0} listed more than once")]
    DuplicateIndex(usize),

    #[error("not spacelike: |p| = {0} (need |p| < 1)")]
    NotSpacelike(f64),

    #[error("curvature vector outside the cone (gamma margin {0})")]
    OutsideCone(f64),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("expression parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("{0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;
