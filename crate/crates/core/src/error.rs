use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset `{dataset}` has no mapping for native label id {id}")]
    UnknownNativeId { dataset: String, id: u8 },
    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("remap strategy `to_class` requires a target class")]
    MissingTarget,
    #[error("remap target {target} is not a class of dataset `{dataset}`")]
    InvalidTarget { dataset: String, target: u8 },
    #[error("label table, line {line}: {message}")]
    LabelTable { line: usize, message: String },
    #[error("label space invariant violated: {0}")]
    InvalidLabelSpace(String),

    #[error("missing label file for {}", .0.display())]
    MissingLabel(PathBuf),
    #[error("shape mismatch in {}: {detail}", .path.display())]
    ShapeMismatchFile { path: PathBuf, detail: String },
    #[error("manifest, line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("cannot decode {}: {detail}", .path.display())]
    Decode { path: PathBuf, detail: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("pyramid pooling grid {grid} exceeds feature size {height}x{width}")]
    GridTooLarge { grid: usize, height: usize, width: usize },
    #[error("label {label} outside of the {num_classes} model classes")]
    LabelOutOfRange { label: u8, num_classes: usize },

    #[error("no datasets in required group `{0}`")]
    EmptyGroup(String),

    #[error("pixel of instance class {class} has no instance id")]
    MissingInstances { class: u8 },

    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
