//! Ladder-style dense semantic segmentation trained jointly on driving and
//! indoor datasets.
//!
//! The crate covers the whole pipeline at desk scale: a unified label space
//! with benchmark export ([`labelspace`]), on-disk datasets and augmentation
//! ([`dataset_io`]), mixed-domain batch scheduling ([`sampler`]), the
//! network ([`model`]) with its pyramid auxiliary loss ([`losses`]),
//! training ([`trainer`]) and evaluation ([`metrics`]).

pub mod checkpoint;
pub mod config;
pub mod dataset_io;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod grid;
pub mod labelspace;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod sampler;
pub mod tensor;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use dataset_io::{AugmentParams, Sample};
pub use error::{Error, Result};
pub use grid::{Grid, InstanceMap, LabelMap};
pub use labelspace::{build_default_space, Category, Group, LabelSpace, RemapKind, RemapStrategy};
pub use model::{Model, ModelConfig, ModelOutputs};
pub use tensor::Tensor;
pub use trainer::{TrainConfig, Trainer};
