//! Hyperparameter optimization that fuses TPE Bayesian optimization with
//! self-distillation across trials.
//!
//! A study alternates two phases: a warm-up phase of ordinary TPE trials
//! that seeds a checkpoint registry, then a distillation phase where each
//! trial draws a teacher and a differently-initialized student from the
//! registry's top-K checkpoints and trains against a blend of task and
//! distillation losses over a fresh observation set. Baseline methods
//! (random, grid, plain TPE, pure self-distillation, and distillation with
//! a fixed tuned teacher) share the same trial engine for comparisons.
//!
//! The numeric core is generic over the scalar type (`f32`/`f64`); the
//! crate-root aliases pin the `f64` instantiation used by study execution,
//! persistence, and the CLI.

pub mod config;
pub mod nn;
pub mod replay;
pub mod scalar;
pub mod space;
pub mod store;
pub mod study;
pub mod tpe;

pub use scalar::Scalar;

// f64-backed aliases for the generic core types.
pub type ParamSpec = space::ParamSpec<f64>;
pub type SearchSpace = space::SearchSpace<f64>;
pub type ParamVector = space::ParamVector<f64>;
pub type Observation = tpe::Observation<f64>;
pub type ObservationSet = tpe::ObservationSet<f64>;
pub type ParzenSplit = tpe::ParzenSplit<f64>;
pub type ParzenDensity = tpe::ParzenDensity<f64>;
pub type TpeConfig = tpe::TpeConfig<f64>;
pub type Suggestion = tpe::Suggestion<f64>;
pub type Dataset = nn::Dataset<f64>;
pub type Matrix = nn::Matrix<f64>;
pub type MlpParams = nn::MlpParams<f64>;
pub type TrainConfig = nn::TrainConfig<f64>;
pub type DistillConfig = nn::DistillConfig<f64>;
pub type Checkpoint = study::Checkpoint<f64>;
pub type CheckpointRegistry = study::CheckpointRegistry<f64>;
pub type BossConfig = study::BossConfig<f64>;
pub type StudyState = study::StudyState<f64>;
