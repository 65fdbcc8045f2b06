//! Shared fixtures for integration tests.

use boss_core::nn::DistillLossKind;
use boss_core::space::{ParamKind, ParamSpec, SearchSpace};
use boss_core::study::{BossConfig, DatasetKind, DatasetSpec, TrainerSettings};
use boss_core::tpe::TpeConfig;

/// A seconds-scale study config: tiny data, few epochs, early TPE engagement.
pub fn micro_config(master_seed: u64) -> BossConfig<f64> {
    BossConfig {
        n_total: 12,
        n_warmup: 4,
        k_candidates: 3,
        alpha: 0.5,
        parallelism: 1,
        distill_kind: DistillLossKind::MseLogit,
        temperature: 4.0,
        tpe: TpeConfig {
            gamma: 0.25,
            n_ei_candidates: 8,
            n_startup: 2,
            bandwidth_floor: 1e-3,
            prior_weight: 1.0,
        },
        space: SearchSpace::new(vec![
            ParamSpec::new("l", ParamKind::LogUniformFloat, 1e-3, 1.0),
            ParamSpec::new("m", ParamKind::LogUniformFloat, 1e-3, 1.0),
            ParamSpec::new("w", ParamKind::LogUniformFloat, 1e-5, 1e-2),
            ParamSpec::new("b", ParamKind::IntUniform, 8.0, 32.0),
        ]),
        trainer: TrainerSettings {
            epochs: 3,
            hidden_size: 8,
        },
        dataset: DatasetSpec {
            kind: DatasetKind::Blobs,
            n_train: 60,
            n_val: 30,
            d: 4,
            n_classes: 3,
            separation: 3.0,
            noise: None,
            noise_ratio: 0.0,
            train_path: None,
            val_path: None,
        },
        master_seed,
    }
}
