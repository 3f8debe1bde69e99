use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("expected {expected} channel(s), found {found}")]
    ChannelMismatch { expected: usize, found: usize },

    #[error("image is already grayscale")]
    AlreadyGrayscale,

    #[error("raster data length {len} does not match {width}x{height}x{channels}")]
    RasterSize {
        width: usize,
        height: usize,
        channels: usize,
        len: usize,
    },

    #[error("intensity {0} outside [0, 1]")]
    IntensityRange(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("segment endpoints coincide")]
    DegenerateSegment,

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("least-squares conic is not an ellipse")]
    DegenerateConic,

    #[error("degenerate ellipse (minor radius {0})")]
    DegenerateEllipse(f64),

    #[error("no edge evidence near the predicted ellipse")]
    NoEvidence,

    #[error("dish index {index} out of range for a stack of {len}")]
    DishIndex { index: usize, len: usize },

    #[error("tensor shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("dataset needs at least two classes, found {0}")]
    SingleClass(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("unknown class label {0:?}")]
    UnknownLabel(String),

    #[error("no price configured for class {0:?}")]
    MissingPrice(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
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
