use std::path::PathBuf;

use thiserror::Error;

/// Failures raised while reading or writing a weight container.
#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic {found:?}, expected \"SFVW\"")]
    BadMagic { found: [u8; 4] },
    #[error("truncated container: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("payload length {actual} does not match declared tensors ({expected} bytes)")]
    PayloadLength { expected: usize, actual: usize },
    #[error("malformed header line {line}: {reason}")]
    Header { line: usize, reason: String },
    #[error("tensor {name:?} at offset {offset} overlaps or leaves the payload")]
    Layout { name: String, offset: usize },
    #[error("tensor {name:?} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("missing entry {0:?}")]
    Missing(String),
}

/// Failures raised while decoding a portable pixmap.
#[derive(Debug, Error)]
pub enum ImageError {
    #[error("bad magic {0:?}, expected P6")]
    BadMagic(String),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("unsupported maxval {0}, only 8-bit (1..=255) pixmaps are read")]
    UnsupportedMaxval(u32),
    #[error("truncated pixel data: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("degenerate weighted activations ({which}): ||a * w|| is zero")]
    DegenerateActivations { which: String },
    #[error("no candidate with nonzero weighted norm")]
    NoValidCandidate,
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),
    #[error("empty input to {0}")]
    Empty(&'static str),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("eigen-solver did not converge after {0} sweeps")]
    NoConvergence(usize),
    #[error("non-finite loss at epoch {epoch} (|w| = {weight_norm:e}, location = ({u}, {v}))")]
    NonFiniteLoss {
        epoch: usize,
        weight_norm: f64,
        u: f64,
        v: f64,
    },
    #[error("saliency norm {norm:e} exceeds bound {bound:e} for {image_id}")]
    BoundViolation {
        image_id: String,
        norm: f64,
        bound: f64,
    },
    #[error("weight container {path}: {source}")]
    Container {
        path: PathBuf,
        #[source]
        source: ContainerError,
    },
    #[error(transparent)]
    ContainerFormat(#[from] ContainerError),
    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: ImageError,
    },
    #[error(transparent)]
    ImageFormat(#[from] ImageError),
    #[error("manifest {path}:{line}: {reason}")]
    Manifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            detail: detail.into(),
        }
    }

    /// Wrap into a stage-tagged error for pipeline diagnostics.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
