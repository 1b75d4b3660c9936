use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("EmptyInput: {0}")]
    EmptyInput(String),
    #[error("ShapeMismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("NonBinary: mask {mask} has value {value} at index {index}")]
    NonBinary {
        mask: usize,
        index: usize,
        value: f64,
    },
    #[error("NonFinite: {0}")]
    NonFinite(String),
    #[error("OutOfRange: {0}")]
    OutOfRange(String),
    #[error("NoSurvivingFixations: all {total} fixations shorter than {min_duration_ms} ms")]
    NoSurvivingFixations { total: usize, min_duration_ms: f64 },
    #[error("InvalidFixation: {0}")]
    InvalidFixation(String),
    #[error("OutOfBounds: {0}")]
    OutOfBounds(String),
    #[error("MissingFile: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("SchemaError: {0}")]
    SchemaError(String),
    #[error("DanglingPath: {}", .0.display())]
    DanglingPath(PathBuf),
    #[error("IndexOutOfRange: class {index} with {classes} classes")]
    IndexOutOfRange { index: usize, classes: usize },
    #[error("MissingSaliency: sample {0} has no saliency map")]
    MissingSaliency(String),
    #[error("EmptySplit: {0}")]
    EmptySplit(String),
    #[error("GridMismatch: {0}")]
    GridMismatch(String),
    #[error("UnreadableMask: {0}")]
    UnreadableMask(String),
    #[error("SingleClass: ROC AUC needs both classes present")]
    SingleClass,
    #[error("NoPositives: average precision needs at least one positive")]
    NoPositives,
    #[error("InsufficientPoints: need at least two multiples, got {0}")]
    InsufficientPoints(usize),
    #[error("SourceExhausted: requested {requested} {class} samples, only {available} available")]
    SourceExhausted {
        class: String,
        requested: usize,
        available: usize,
    },
    #[error("ConfigInvalid: {0}")]
    ConfigInvalid(String),
    #[error("BackboneUnavailable: {0}")]
    BackboneUnavailable(String),
    #[error("Checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Short stable name of the variant, used for CLI messages.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyInput(_) => "EmptyInput",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::NonBinary { .. } => "NonBinary",
            Error::NonFinite(_) => "NonFinite",
            Error::OutOfRange(_) => "OutOfRange",
            Error::NoSurvivingFixations { .. } => "NoSurvivingFixations",
            Error::InvalidFixation(_) => "InvalidFixation",
            Error::OutOfBounds(_) => "OutOfBounds",
            Error::MissingFile(_) => "MissingFile",
            Error::SchemaError(_) => "SchemaError",
            Error::DanglingPath(_) => "DanglingPath",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::MissingSaliency(_) => "MissingSaliency",
            Error::EmptySplit(_) => "EmptySplit",
            Error::GridMismatch(_) => "GridMismatch",
            Error::UnreadableMask(_) => "UnreadableMask",
            Error::SingleClass => "SingleClass",
            Error::NoPositives => "NoPositives",
            Error::InsufficientPoints(_) => "InsufficientPoints",
            Error::SourceExhausted { .. } => "SourceExhausted",
            Error::ConfigInvalid(_) => "ConfigInvalid",
            Error::BackboneUnavailable(_) => "BackboneUnavailable",
            Error::Checkpoint(_) => "Checkpoint",
            Error::Io(_) => "Io",
            Error::Csv(_) => "Csv",
            Error::Image(_) => "Image",
            Error::Json(_) => "Json",
        }
    }
}
