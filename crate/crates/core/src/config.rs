//! The study config file: a TOML document with `space`, `boss`, `tpe`,
//! `trainer`, and `dataset` sections plus a `seeds` list. Unknown keys are
//! rejected with their location; parse errors carry line numbers.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::DistillLossKind;
use crate::space::{ParamKind, ParamSpec, SearchSpace};
use crate::study::{BossConfig, DatasetSpec, StudyError, TrainerSettings};
use crate::tpe::TpeConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error in {path}:\n{message}")]
    Parse { path: String, message: String },
    #[error(transparent)]
    Invalid(#[from] StudyError),
}

/// One `[[space]]` entry.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceEntry {
    pub name: String,
    pub kind: ParamKind,
    pub low: f64,
    pub high: f64,
}

/// The `[boss]` section: budgets, the blend weight, and the distillation
/// loss. Parallelism defaults to 1 and is overridable from the CLI.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BossSection {
    pub n_total: usize,
    pub n_warmup: usize,
    pub k_candidates: usize,
    pub alpha: f64,
    pub distill: DistillLossKind,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

fn default_temperature() -> f64 {
    4.0
}

fn default_parallelism() -> usize {
    1
}

/// The `[tpe]` section.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TpeSection {
    pub gamma: f64,
    pub n_ei_candidates: usize,
    pub n_startup: usize,
    #[serde(default = "default_bandwidth_floor")]
    pub bandwidth_floor: f64,
    #[serde(default = "default_prior_weight")]
    pub prior_weight: f64,
}

fn default_bandwidth_floor() -> f64 {
    1e-3
}

fn default_prior_weight() -> f64 {
    1.0
}

/// The whole config document.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfigFile {
    pub seeds: Vec<u64>,
    pub space: Vec<SpaceEntry>,
    pub boss: BossSection,
    pub tpe: TpeSection,
    pub trainer: TrainerSettings,
    pub dataset: DatasetSpec,
}

impl StudyConfigFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::parse(&text).map_err(|message| ConfigError::Parse {
            path: path.display().to_string(),
            message,
        })
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Instantiates a runnable config for one seed. The CLI's parallelism
    /// flag, when given, overrides the file's value.
    pub fn to_boss_config(
        &self,
        master_seed: u64,
        parallelism_override: Option<usize>,
    ) -> Result<BossConfig<f64>, ConfigError> {
        let space = SearchSpace::new(
            self.space
                .iter()
                .map(|e| ParamSpec::new(e.name.clone(), e.kind, e.low, e.high))
                .collect(),
        );
        let config = BossConfig {
            n_total: self.boss.n_total,
            n_warmup: self.boss.n_warmup,
            k_candidates: self.boss.k_candidates,
            alpha: self.boss.alpha,
            parallelism: parallelism_override.unwrap_or(self.boss.parallelism),
            distill_kind: self.boss.distill,
            temperature: self.boss.temperature,
            tpe: TpeConfig {
                gamma: self.tpe.gamma,
                n_ei_candidates: self.tpe.n_ei_candidates,
                n_startup: self.tpe.n_startup,
                bandwidth_floor: self.tpe.bandwidth_floor,
                prior_weight: self.tpe.prior_weight,
            },
            space,
            trainer: self.trainer,
            dataset: self.dataset.clone(),
            master_seed,
        };
        config.validate()?;
        Ok(config)
    }
}
