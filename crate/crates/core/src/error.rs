use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to parse hierarchy config: {0}")]
    Parse(String),

    #[error("invalid hierarchy structure: {0}")]
    Structure(String),

    #[error("unknown class `{0}`")]
    UnknownClass(String),

    #[error("unknown important set `{0}`")]
    UnknownSet(String),

    #[error("important set `{0}` is empty")]
    EmptySet(String),

    #[error("class id {id} out of range for {classes} classes")]
    InvalidClassId { id: u32, classes: usize },

    #[error("shape mismatch: ground truth is {gt_width}x{gt_height}, prediction is {pred_width}x{pred_height}")]
    ShapeMismatch {
        gt_width: u32,
        gt_height: u32,
        pred_width: u32,
        pred_height: u32,
    },

    #[error("prediction contains the ignore id at pixel {index}")]
    IgnoreInPrediction { index: usize },

    #[error("dimension mismatch: expected {expected} classes, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("no class is present in ground truth or prediction")]
    NoPresentClass,

    #[error("{path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("{path}: unknown pixel value {value}")]
    UnknownPixelId { path: PathBuf, value: u16 },

    #[error("{path}: expected a single-channel raster, found {channels} channels")]
    MultiChannel { path: PathBuf, channels: usize },

    #[error("missing prediction for {}", keys.join(", "))]
    MissingPrediction { keys: Vec<String> },

    #[error("duplicate key `{key}` ({first} and {second})")]
    DuplicateKey {
        key: String,
        first: PathBuf,
        second: PathBuf,
    },

    #[error("palette has no color for `{0}`")]
    PaletteGap(String),

    #[error("duplicate leaderboard entry `{0}`")]
    DuplicateName(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
