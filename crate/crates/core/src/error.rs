use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter count mismatch: model expects {expected}, got {got}")]
    ParamCount { expected: usize, got: usize },

    #[error("layer {layer}: expected input width {expected}, got {got}")]
    LayerWidth {
        layer: usize,
        expected: usize,
        got: usize,
    },

    #[error("label {label} at sample {index} is outside 0..{classes}")]
    LabelRange {
        index: usize,
        label: usize,
        classes: usize,
    },

    #[error("empty batch")]
    EmptyBatch,

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("covariance of mixture component {component} is not symmetric positive definite")]
    NotPositiveDefinite { component: usize },

    #[error("non-finite {what} at parameter {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("negative curvature at parameters {indices:?}")]
    ConvexityViolation { indices: Vec<usize> },

    #[error("perturbation scale exceeds support at parameters {indices:?}")]
    SupportViolation { indices: Vec<usize> },

    #[error("perturbation leaves the neighborhood at parameter {index}: |u| = {magnitude}, radius = {radius}")]
    OutsideNeighborhood {
        index: usize,
        magnitude: f64,
        radius: f64,
    },

    #[error("every coordinate of the perturbation is below the skip threshold")]
    DegeneratePerturbation,

    #[error("non-finite gradient at step {step}: indices {indices:?}")]
    NonFiniteGradient {
        step: u64,
        indices: Vec<usize>,
        sigma: Vec<f64>,
        u: Vec<f64>,
    },

    #[error("idx: bad magic {0:02x?}")]
    IdxBadMagic([u8; 4]),

    #[error("idx: unsupported data type 0x{0:02x}")]
    IdxUnsupportedType(u8),

    #[error("idx: truncated file (needed {needed} bytes, found {found})")]
    IdxTruncated { needed: usize, found: usize },

    #[error("idx: dimensions {0:?} overflow the addressable size")]
    IdxDimOverflow(Vec<u32>),

    #[error("{kind} file: bad magic {found:02x?}")]
    BadMagic { kind: &'static str, found: [u8; 4] },

    #[error("{kind} file: truncated")]
    Truncated { kind: &'static str },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
