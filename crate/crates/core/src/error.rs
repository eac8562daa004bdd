use std::path::PathBuf;
use thiserror::Error;

/// Errors produced by dataset IO, model construction, training, and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("flow file {path}: bad magic {found} (expected 202021.25)")]
    BadFlowMagic { path: PathBuf, found: f32 },

    #[error("flow file {path}: nonpositive dimensions {width}x{height}")]
    BadFlowDims {
        path: PathBuf,
        width: i32,
        height: i32,
    },

    #[error("flow file {path}: truncated ({got} bytes, expected {expected})")]
    TruncatedFlow {
        path: PathBuf,
        got: usize,
        expected: usize,
    },

    #[error("flow field contains non-finite values")]
    NonFiniteFlow,

    #[error("clip {dir}: {frames} frames but {masks} masks")]
    MaskCountMismatch {
        dir: PathBuf,
        frames: usize,
        masks: usize,
    },

    #[error("clip {dir}: {frames} frames but {flows} flow files")]
    FlowCountMismatch {
        dir: PathBuf,
        frames: usize,
        flows: usize,
    },

    #[error("clip {dir}: no frames found")]
    EmptyClip { dir: PathBuf },

    #[error("shape of size {size}x{size} does not fit a {width}x{height} canvas over {frames} frames")]
    ShapeDoesNotFit {
        size: usize,
        width: usize,
        height: usize,
        frames: usize,
    },

    #[error("excitation map requires ground truth when alpha > 0 (alpha = {alpha})")]
    MissingGroundTruth { alpha: f64 },

    #[error("F-measure undefined: ground truth has empty foreground")]
    EmptyForeground,

    #[error("missing prediction for frame {frame} of clip {clip}")]
    MissingPrediction { clip: String, frame: String },

    #[error("checkpoint {path}: checksum failure")]
    ChecksumFailure { path: PathBuf },

    #[error("checkpoint {path}: format version {found} is not supported (expected {expected})")]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("checkpoint {path}: malformed record ({reason})")]
    MalformedCheckpoint { path: PathBuf, reason: String },

    #[error("config {path}: line {line}: {reason}")]
    BadConfig {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("non-finite loss at epoch {epoch}, iteration {iter}, branch {branch}")]
    NonFiniteLoss {
        epoch: u32,
        iter: usize,
        branch: &'static str,
    },

    #[error("missing dataset: {0}")]
    MissingDataset(PathBuf),

    #[error("image {path}: {reason}")]
    BadImage { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.into(),
            actual: actual.into(),
        }
    }
}
