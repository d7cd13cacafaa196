use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("malformed {what}: {message}")]
    Parse { what: &'static str, message: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("class '{0}' would be left without training records")]
    EmptyClass(String),

    #[error("duplicate image reference: {0}")]
    DuplicateImage(String),

    #[error("class id {class_id} outside [1, {class_count}] for {image_ref}")]
    ClassOutOfRange {
        image_ref: String,
        class_id: u32,
        class_count: u32,
    },

    #[error("class map mismatch: {0}")]
    ClassMapMismatch(String),

    /// A synthetic record reached an evaluation split.
    #[error("contamination: synthetic record {image_ref} in {split} split")]
    Contamination { image_ref: String, split: String },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("anchor size must be strictly positive, got ({0}, {1})")]
    InvalidAnchor(f64, f64),

    #[error("records missing landmarks: {0:?}")]
    MissingLandmarks(Vec<String>),

    #[error("all landmarks lie outside the image frame")]
    LandmarksOutOfFrame,

    #[error("crop margin must be non-negative, got {0}")]
    NegativeMargin(f64),

    #[error("crop box {0:?} lies outside a {1}x{2} image")]
    CropOutOfBounds([i64; 4], u32, u32),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is indefinite: eigenvalue {eigenvalue:e} below tolerance -{tolerance:e}")]
    Indefinite { eigenvalue: f64, tolerance: f64 },

    #[error("non-finite loss at {kimg:.3} kimg; diagnostic checkpoint at {checkpoint}")]
    NonFiniteLoss { kimg: f64, checkpoint: PathBuf },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("stage '{stage}' has not produced {artifact}")]
    MissingStage { stage: String, artifact: PathBuf },

    #[error("stale input from stage '{stage}': {detail}")]
    StaleInput { stage: String, detail: String },

    #[error("no manifest for matrix cell {0}")]
    MissingCell(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: &'static str, message: impl ToString) -> Self {
        Error::Parse {
            what,
            message: message.to_string(),
        }
    }
}
