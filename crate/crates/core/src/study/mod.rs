//! Study orchestration: the two-phase optimization loop, the comparison
//! methods, and the parallel trial worker pool.

mod engine;
mod registry;
mod seeding;

pub use engine::{
    baseline_lambda, grid_points, lambda_for_trial, materialize_data, resume_study_dir, run_study,
    run_study_to_dir, train_config_for, StudyData, StudyDriver,
};
pub use registry::{select_teacher_student, Checkpoint, CheckpointRegistry, Phase, Selection};
pub use seeding::{stream_rng, stream_seed, RngStream};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{DistillLossKind, NnError, NoiseKind};
use crate::scalar::Scalar;
use crate::space::{ParamSpec, SearchSpace, SpaceReport};
use crate::store::StoreError;
use crate::tpe::{ObservationSet, SuggestTrace, TpeConfig, TpeError};

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("invalid study config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Space(#[from] SpaceReport),
    #[error(transparent)]
    Tpe(#[from] TpeError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("checkpoint registry is empty")]
    EmptyRegistry,
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("every warm-up trial failed; nothing to distill from")]
    AllWarmupFailed,
    #[error("study is already complete")]
    AlreadyComplete,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("internal scheduling error: {0}")]
    Scheduling(String),
    #[error("replay mismatch: {0}")]
    ReplayMismatch(String),
}

/// The comparison methods. Declaration order is the report row order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Baseline,
    Random,
    Grid,
    Bo,
    Sd,
    SdBo,
    Boss,
}

impl MethodKind {
    pub const ALL: [MethodKind; 7] = [
        MethodKind::Baseline,
        MethodKind::Random,
        MethodKind::Grid,
        MethodKind::Bo,
        MethodKind::Sd,
        MethodKind::SdBo,
        MethodKind::Boss,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MethodKind::Baseline => "baseline",
            MethodKind::Random => "random",
            MethodKind::Grid => "grid",
            MethodKind::Bo => "bo",
            MethodKind::Sd => "sd",
            MethodKind::SdBo => "sd_bo",
            MethodKind::Boss => "boss",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MethodKind::ALL
            .iter()
            .find(|m| m.as_str() == s)
            .copied()
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

/// Fixed, non-searched trainer settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSettings {
    pub epochs: usize,
    pub hidden_size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Blobs,
    File,
}

/// Where the study's data comes from: a seeded blob generator or a pair of
/// delimited files. Noise, when configured, corrupts the training split only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    #[serde(default)]
    pub n_train: usize,
    #[serde(default)]
    pub n_val: usize,
    #[serde(default)]
    pub d: usize,
    #[serde(default)]
    pub n_classes: usize,
    #[serde(default)]
    pub separation: f64,
    #[serde(default)]
    pub noise: Option<NoiseKind>,
    #[serde(default)]
    pub noise_ratio: f64,
    #[serde(default)]
    pub train_path: Option<String>,
    #[serde(default)]
    pub val_path: Option<String>,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), StudyError> {
        match self.kind {
            DatasetKind::Blobs => {
                if self.n_train < 1 || self.n_val < 1 {
                    return Err(StudyError::InvalidConfig(
                        "dataset needs n_train >= 1 and n_val >= 1".into(),
                    ));
                }
                if self.d < 1 || self.n_classes < 2 {
                    return Err(StudyError::InvalidConfig(
                        "dataset needs d >= 1 and n_classes >= 2".into(),
                    ));
                }
                if !(self.separation >= 0.0 && self.separation.is_finite()) {
                    return Err(StudyError::InvalidConfig("separation must be >= 0".into()));
                }
            }
            DatasetKind::File => {
                if self.train_path.is_none() || self.val_path.is_none() {
                    return Err(StudyError::InvalidConfig(
                        "file datasets need train_path and val_path".into(),
                    ));
                }
            }
        }
        if self.noise.is_some() && !(0.0..=1.0).contains(&self.noise_ratio) {
            return Err(StudyError::InvalidConfig(
                "noise_ratio must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Full study configuration: N/W/K/α/P, the distillation loss, TPE knobs,
/// the search space, trainer settings, the dataset, and the master seed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BossConfig<S> {
    pub n_total: usize,
    pub n_warmup: usize,
    pub k_candidates: usize,
    pub alpha: S,
    pub parallelism: usize,
    pub distill_kind: DistillLossKind,
    pub temperature: S,
    pub tpe: TpeConfig<S>,
    pub space: SearchSpace<S>,
    pub trainer: TrainerSettings,
    pub dataset: DatasetSpec,
    pub master_seed: u64,
}

/// Parameter names the trainer understands: learning rate, the momentum
/// complement, weight decay, batch size.
pub const SEARCHABLE_PARAMS: [&str; 4] = ["l", "m", "w", "b"];

impl<S: Scalar> BossConfig<S> {
    pub fn validate(&self) -> Result<(), StudyError> {
        if !(1 <= self.n_warmup && self.n_warmup < self.n_total) {
            return Err(StudyError::InvalidConfig(format!(
                "need 1 <= n_warmup < n_total, got W={} N={}",
                self.n_warmup, self.n_total
            )));
        }
        if self.k_candidates < 1 {
            return Err(StudyError::InvalidConfig("k_candidates must be >= 1".into()));
        }
        if !(1 <= self.parallelism && self.parallelism <= self.n_total) {
            return Err(StudyError::InvalidConfig(format!(
                "need 1 <= parallelism <= n_total, got P={}",
                self.parallelism
            )));
        }
        let alpha = self.alpha.as_f64();
        if !(0.0..=1.0).contains(&alpha) {
            return Err(StudyError::InvalidConfig("alpha must lie in [0, 1]".into()));
        }
        if !(self.temperature.as_f64() > 0.0) {
            return Err(StudyError::InvalidConfig("temperature must be > 0".into()));
        }
        self.tpe.validate()?;
        self.space.validate()?;
        for p in self.space.params() {
            if !SEARCHABLE_PARAMS.contains(&p.name.as_str()) {
                return Err(StudyError::InvalidConfig(format!(
                    "search parameter `{}` is not one the trainer maps (expected any of l, m, w, b)",
                    p.name
                )));
            }
        }
        if self.trainer.hidden_size < 1 {
            return Err(StudyError::InvalidConfig("hidden_size must be >= 1".into()));
        }
        self.dataset.validate()?;
        Ok(())
    }

    /// The `f64` wire form used for digests and the study file.
    pub fn to_record(&self) -> BossConfig<f64> {
        BossConfig {
            n_total: self.n_total,
            n_warmup: self.n_warmup,
            k_candidates: self.k_candidates,
            alpha: self.alpha.as_f64(),
            parallelism: self.parallelism,
            distill_kind: self.distill_kind,
            temperature: self.temperature.as_f64(),
            tpe: TpeConfig {
                gamma: self.tpe.gamma.as_f64(),
                n_ei_candidates: self.tpe.n_ei_candidates,
                n_startup: self.tpe.n_startup,
                bandwidth_floor: self.tpe.bandwidth_floor.as_f64(),
                prior_weight: self.tpe.prior_weight.as_f64(),
            },
            space: SearchSpace::new(
                self.space
                    .params()
                    .iter()
                    .map(|p| ParamSpec::new(p.name.clone(), p.kind, p.low.as_f64(), p.high.as_f64()))
                    .collect(),
            ),
            trainer: self.trainer,
            dataset: self.dataset.clone(),
            master_seed: self.master_seed,
        }
    }

    pub fn from_record(record: &BossConfig<f64>) -> Self {
        BossConfig {
            n_total: record.n_total,
            n_warmup: record.n_warmup,
            k_candidates: record.k_candidates,
            alpha: S::of(record.alpha),
            parallelism: record.parallelism,
            distill_kind: record.distill_kind,
            temperature: S::of(record.temperature),
            tpe: TpeConfig {
                gamma: S::of(record.tpe.gamma),
                n_ei_candidates: record.tpe.n_ei_candidates,
                n_startup: record.tpe.n_startup,
                bandwidth_floor: S::of(record.tpe.bandwidth_floor),
                prior_weight: S::of(record.tpe.prior_weight),
            },
            space: SearchSpace::new(
                record
                    .space
                    .params()
                    .iter()
                    .map(|p| ParamSpec::new(p.name.clone(), p.kind, S::of(p.low), S::of(p.high)))
                    .collect(),
            ),
            trainer: record.trainer,
            dataset: record.dataset.clone(),
            master_seed: record.master_seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Failed,
}

/// One scored candidate from a TPE suggestion, in wire form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub unit: Vec<f64>,
    pub score: f64,
}

/// The full candidate set behind a guided suggestion, kept so the argmax can
/// be re-checked offline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateTrace {
    pub phi_star: f64,
    pub chosen: usize,
    pub candidates: Vec<CandidateRecord>,
}

impl CandidateTrace {
    pub fn from_suggest<S: Scalar>(trace: &SuggestTrace<S>) -> Self {
        Self {
            phi_star: trace.phi_star.as_f64(),
            chosen: trace.chosen,
            candidates: trace
                .candidates
                .iter()
                .map(|c| CandidateRecord {
                    unit: c.unit.iter().map(|v| v.as_f64()).collect(),
                    score: c.score.as_f64(),
                })
                .collect(),
        }
    }
}

/// Dispatch record: everything known about a trial when it starts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialStarted {
    pub seq: u64,
    pub trial_id: u64,
    pub phase: Phase,
    pub lambda: BTreeMap<String, f64>,
    /// Label of the observation set the suggestion read; `None` when λ was
    /// fixed (baseline, sd, grid) or a pure prior draw (random).
    pub source: Option<String>,
    pub candidates: Option<CandidateTrace>,
    pub teacher_id: Option<u64>,
    pub student_init_id: Option<u64>,
    pub degenerate_init: bool,
}

/// Completion record for a trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialFinished {
    pub seq: u64,
    pub trial_id: u64,
    pub status: TrialStatus,
    /// Validation accuracy Φ; absent for failed trials, which enter the
    /// observation set with the `-inf` sentinel.
    pub objective: Option<f64>,
    pub error: Option<String>,
    pub checkpointed: bool,
}

/// The append-only structured event log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum StudyEvent {
    TrialStarted(TrialStarted),
    TrialFinished(TrialFinished),
}

impl StudyEvent {
    pub fn seq(&self) -> u64 {
        match self {
            StudyEvent::TrialStarted(e) => e.seq,
            StudyEvent::TrialFinished(e) => e.seq,
        }
    }

    pub fn trial_id(&self) -> u64 {
        match self {
            StudyEvent::TrialStarted(e) => e.trial_id,
            StudyEvent::TrialFinished(e) => e.trial_id,
        }
    }
}

/// A completed trial as a (started, finished) pair over the event log.
#[derive(Clone, Copy, Debug)]
pub struct TrialRecord<'a> {
    pub started: &'a TrialStarted,
    pub finished: &'a TrialFinished,
}

/// Full resumable state of a run.
#[derive(Clone, Debug)]
pub struct StudyState<S> {
    pub method: MethodKind,
    pub config: BossConfig<S>,
    /// Λ: observations from task-loss-trained trials.
    pub warmup_observations: ObservationSet<S>,
    /// Λ′: observations from distillation-trained trials.
    pub boss_observations: ObservationSet<S>,
    /// Θ: every successful trial's trained parameters.
    pub registry: CheckpointRegistry<S>,
    pub events: Vec<StudyEvent>,
    pub next_trial_id: u64,
    pub next_seq: u64,
    pub complete: bool,
}

impl<S: Scalar> StudyState<S> {
    pub fn new(config: BossConfig<S>, method: MethodKind) -> Self {
        Self {
            method,
            config,
            warmup_observations: ObservationSet::new(WARMUP_SET_LABEL),
            boss_observations: ObservationSet::new(BOSS_SET_LABEL),
            registry: CheckpointRegistry::new(),
            events: Vec::new(),
            next_trial_id: 1,
            next_seq: 0,
            complete: false,
        }
    }

    /// Completed trials in completion order. When a trial id was dispatched
    /// more than once (a crash between start and finish, then a resume), the
    /// latest start wins.
    pub fn trial_records(&self) -> Vec<TrialRecord<'_>> {
        let mut out = Vec::new();
        for (i, ev) in self.events.iter().enumerate() {
            if let StudyEvent::TrialFinished(fin) = ev {
                let started = self.events[..i].iter().rev().find_map(|e| match e {
                    StudyEvent::TrialStarted(s) if s.trial_id == fin.trial_id => Some(s),
                    _ => None,
                });
                if let Some(started) = started {
                    out.push(TrialRecord {
                        started,
                        finished: fin,
                    });
                }
            }
        }
        out
    }

    pub fn completed_trials(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, StudyEvent::TrialFinished(_)))
            .count()
    }

    /// The reported model: the best checkpoint in Θ.
    pub fn best_checkpoint(&self) -> Option<&Checkpoint<S>> {
        self.registry.best()
    }
}

pub const WARMUP_SET_LABEL: &str = "warmup";
pub const BOSS_SET_LABEL: &str = "boss";
