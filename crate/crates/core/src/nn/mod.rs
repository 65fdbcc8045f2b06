//! Desk-scale neural training: a one-hidden-layer ReLU MLP with manual
//! backpropagation, task and distillation losses, SGD with momentum and
//! weight decay, synthetic datasets, and label-noise injection.

mod data;
mod loss;
mod mlp;
mod train;

pub use data::{make_blobs, Dataset, LabelNoiseConfig, NoiseKind, SplitTag};
pub use loss::{combined_loss, cross_entropy_loss, kl_distill_loss, mse_logit_loss, softmax};
pub use mlp::{evaluate, Matrix, MlpParams};
pub use train::{
    gradients, train, DistillConfig, DistillLossKind, DistillTerm, Teacher, TrainConfig, TrainRun,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("training diverged (non-finite loss) at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
    #[error("dataset file error: {0}")]
    DatasetFile(String),
}
