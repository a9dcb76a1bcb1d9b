//! A small convolutional classifier in `f64`: six conv blocks, a dense
//! head, Adam, augmentation, early stopping and repetition statistics.
//!
//! Everything runs on one thread in a fixed order, so training is
//! bit-reproducible for a given seed.

pub mod gradcheck;
pub mod layers;
mod metrics;
mod model;
mod optim;
mod tensor;
mod train;

use thiserror::Error;

use crate::image::ImageError;

pub use metrics::{argmax, f1_from_counts, mean_ci95, summarize_repetitions, F1Kind, Metrics, RepetitionSummary};
pub use model::{ForwardCache, ModelSpec, Network, CONV_BLOCKS, INPUT_SCALE};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use tensor::Tensor;
pub use train::{
    augment, evaluate, flip_horizontal, history_csv, predict_all, repeat_experiment, repeat_with, repetition_seed,
    stratified_split, train, AugmentConfig, Dataset, EpochRecord, TrainConfig, TrainOutcome,
};

#[derive(Debug, Error)]
pub enum CnnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("max-pool needs even dimensions, got {height}x{width}")]
    OddDimensions { height: usize, width: usize },
    #[error("training-mode batch norm needs at least 2 samples, got {0}")]
    BatchTooSmall(usize),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("model expects {expected}x{expected} images, got {width}x{height}")]
    InputSize { expected: usize, width: usize, height: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training data contains a single class")]
    SingleClass,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("at least 2 repetitions required, got {0}")]
    Repetitions(usize),
    #[error("class mismatch: {0}")]
    ClassMismatch(String),
    #[error("weight file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] ImageError),
}
