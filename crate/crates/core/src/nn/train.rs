//! SGD training with momentum, weight decay, and optional distillation
//! against a frozen teacher.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{combined_loss, cross_entropy_loss, kl_distill_loss, mse_logit_loss, softmax};
use super::mlp::{evaluate, Matrix, MlpParams};
use super::{Dataset, NnError};
use crate::scalar::Scalar;

/// Per-trial optimizer settings. The momentum coefficient is `1 - m` for the
/// sampled search value `m`; callers convert before constructing this.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig<S> {
    pub learning_rate: S,
    pub momentum_coefficient: S,
    pub weight_decay: S,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl<S: Scalar> TrainConfig<S> {
    pub fn validate(&self, n_train: usize) -> Result<(), NnError> {
        if !(self.learning_rate > S::zero() && self.learning_rate.is_finite()) {
            return Err(NnError::InvalidConfig("learning_rate must be > 0".into()));
        }
        if !(self.momentum_coefficient >= S::zero() && self.momentum_coefficient < S::one()) {
            return Err(NnError::InvalidConfig(
                "momentum_coefficient must lie in [0, 1)".into(),
            ));
        }
        if !(self.weight_decay >= S::zero() && self.weight_decay.is_finite()) {
            return Err(NnError::InvalidConfig("weight_decay must be >= 0".into()));
        }
        if self.batch_size < 1 || self.batch_size > n_train {
            return Err(NnError::InvalidConfig(format!(
                "batch_size must lie in [1, {n_train}], got {}",
                self.batch_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistillLossKind {
    MseLogit,
    KlDivergence,
}

/// Distillation settings: the blend weight α, the logit-matching loss, and
/// the temperature (KL only).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistillConfig<S> {
    pub alpha: S,
    pub loss_kind: DistillLossKind,
    pub temperature: S,
}

impl<S: Scalar> DistillConfig<S> {
    pub fn new(alpha: S, loss_kind: DistillLossKind, temperature: S) -> Self {
        Self {
            alpha,
            loss_kind,
            temperature,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.alpha >= S::zero() && self.alpha <= S::one()) {
            return Err(NnError::InvalidConfig("alpha must lie in [0, 1]".into()));
        }
        if !(self.temperature > S::zero()) {
            return Err(NnError::InvalidConfig("temperature must be > 0".into()));
        }
        Ok(())
    }
}

/// Teacher-side inputs for one gradient evaluation: logits already computed
/// on the current batch.
pub struct DistillTerm<'a, S> {
    pub teacher_logits: &'a Matrix<S>,
    pub config: &'a DistillConfig<S>,
}

/// A frozen teacher for a whole training run; logits are recomputed fresh
/// on every batch.
pub struct Teacher<'a, S> {
    pub params: &'a MlpParams<S>,
    pub config: &'a DistillConfig<S>,
}

/// Exact analytic gradient of the active loss (task loss alone, or the
/// α-blend with the distillation term) for every weight and bias, plus the
/// loss value itself.
///
/// At α = 1 the distillation term is skipped entirely, so gradients match a
/// teacherless call bit for bit; at α = 0 the labels are never read.
pub fn gradients<S: Scalar>(
    params: &MlpParams<S>,
    batch: &Matrix<S>,
    labels: &[usize],
    distill: Option<DistillTerm<'_, S>>,
) -> Result<(MlpParams<S>, S), NnError> {
    let (d, h, c) = params.dims();
    if batch.rows() != labels.len() {
        return Err(NnError::ShapeMismatch(format!(
            "{} batch rows vs {} labels",
            batch.rows(),
            labels.len()
        )));
    }
    if let Some(term) = &distill {
        term.config.validate()?;
    }
    let b = batch.rows();
    let bf = S::of_usize(b);

    let pre = params.hidden_pre(batch)?;
    let mut hidden = pre.clone();
    for v in hidden.data_mut() {
        if *v < S::zero() {
            *v = S::zero();
        }
    }
    let logits = params.logits_from_hidden(&hidden);

    let alpha = distill
        .as_ref()
        .map(|t| t.config.alpha)
        .unwrap_or_else(S::one);
    let use_task = distill.is_none() || alpha > S::zero();
    let use_distill = distill.is_some() && alpha < S::one();

    let mut dz = Matrix::zeros(b, c);
    let mut task_loss = S::zero();
    let mut distill_loss = S::zero();

    if use_task {
        task_loss = cross_entropy_loss(&logits, labels)?;
        let scale = alpha / bf;
        for i in 0..b {
            let p = softmax(logits.row(i))?;
            let dzi = dz.row_mut(i);
            for k in 0..c {
                let target = if k == labels[i] { S::one() } else { S::zero() };
                dzi[k] = dzi[k] + scale * (p[k] - target);
            }
        }
    }

    if use_distill {
        let term = distill.as_ref().expect("checked above");
        let teacher = term.teacher_logits;
        if teacher.rows() != b || teacher.cols() != c {
            return Err(NnError::ShapeMismatch(format!(
                "teacher logits {}x{} vs student {}x{}",
                teacher.rows(),
                teacher.cols(),
                b,
                c
            )));
        }
        let one_minus = S::one() - alpha;
        match term.config.loss_kind {
            DistillLossKind::MseLogit => {
                distill_loss = mse_logit_loss(&logits, teacher)?;
                let scale = one_minus * S::of(2.0) / bf;
                for i in 0..b {
                    let (zi, ti) = (logits.row(i), teacher.row(i));
                    let dzi = dz.row_mut(i);
                    for k in 0..c {
                        dzi[k] = dzi[k] + scale * (zi[k] - ti[k]);
                    }
                }
            }
            DistillLossKind::KlDivergence => {
                let temp = term.config.temperature;
                distill_loss = kl_distill_loss(&logits, teacher, temp)?;
                let scale = one_minus * temp / bf;
                for i in 0..b {
                    let zs: Vec<S> = logits.row(i).iter().map(|&v| v / temp).collect();
                    let ts: Vec<S> = teacher.row(i).iter().map(|&v| v / temp).collect();
                    let ps = softmax(&zs)?;
                    let pt = softmax(&ts)?;
                    let dzi = dz.row_mut(i);
                    for k in 0..c {
                        dzi[k] = dzi[k] + scale * (ps[k] - pt[k]);
                    }
                }
            }
        }
    }

    let loss = if distill.is_none() || alpha == S::one() {
        task_loss
    } else if alpha == S::zero() {
        distill_loss
    } else {
        combined_loss(task_loss, distill_loss, alpha)
    };

    // Backprop through the two layers.
    let mut grads = MlpParams::zeros(d, h, c);
    for i in 0..b {
        let dzi = dz.row(i);
        let hi = hidden.row(i);
        for k in 0..c {
            grads.b2[k] = grads.b2[k] + dzi[k];
            let row = grads.w2.row_mut(k);
            for (j, r) in row.iter_mut().enumerate() {
                *r = *r + dzi[k] * hi[j];
            }
        }
    }
    for i in 0..b {
        let dzi = dz.row(i);
        let prei = pre.row(i);
        let xi = batch.row(i);
        for j in 0..h {
            // ReLU gate: derivative 0 at and below the kink.
            if prei[j] > S::zero() {
                let mut dh = S::zero();
                for (k, dzk) in dzi.iter().enumerate() {
                    dh = dh + *dzk * params.w2.row(k)[j];
                }
                grads.b1[j] = grads.b1[j] + dh;
                let row = grads.w1.row_mut(j);
                for (t, r) in row.iter_mut().enumerate() {
                    *r = *r + dh * xi[t];
                }
            }
        }
    }
    Ok((grads, loss))
}

/// One completed training run.
#[derive(Clone, Debug)]
pub struct TrainRun<S> {
    pub params: MlpParams<S>,
    pub val_accuracy: S,
}

/// Runs `epochs * ceil(n / batch_size)` minibatch SGD steps with the update
/// `v <- mu*v - lr*(grad + wd*theta)`, `theta <- theta + v`, over a seeded
/// per-epoch shuffle. Returns the final parameters and validation accuracy.
///
/// A non-finite loss aborts with `NnError::Diverged`; callers treat that as
/// a failed trial rather than a crash.
pub fn train<S: Scalar>(
    train_ds: &Dataset<S>,
    val_ds: &Dataset<S>,
    cfg: &TrainConfig<S>,
    init: &MlpParams<S>,
    teacher: Option<Teacher<'_, S>>,
) -> Result<TrainRun<S>, NnError> {
    cfg.validate(train_ds.len())?;
    init.check_compatible(train_ds.dim(), train_ds.n_classes())?;
    if val_ds.dim() != train_ds.dim() || val_ds.n_classes() != train_ds.n_classes() {
        return Err(NnError::ShapeMismatch(
            "train and val splits disagree on shape".into(),
        ));
    }
    if let Some(t) = &teacher {
        t.params.check_compatible(train_ds.dim(), train_ds.n_classes())?;
        t.config.validate()?;
    }

    let (d, h, c) = init.dims();
    let mut params = init.clone();
    let mut velocity = MlpParams::zeros(d, h, c);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = train_ds.len();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut batch = Matrix::zeros(chunk.len(), d);
            let mut labels = Vec::with_capacity(chunk.len());
            for (row, &idx) in chunk.iter().enumerate() {
                batch.row_mut(row).copy_from_slice(train_ds.row(idx));
                labels.push(train_ds.label(idx));
            }

            let teacher_logits = match &teacher {
                Some(t) => Some(t.params.forward(&batch)?),
                None => None,
            };
            let term = match (&teacher, &teacher_logits) {
                (Some(t), Some(logits)) => Some(DistillTerm {
                    teacher_logits: logits,
                    config: t.config,
                }),
                _ => None,
            };

            // Non-finite activations are divergence, same as a non-finite
            // loss value.
            let (grads, loss) = match gradients(&params, &batch, &labels, term) {
                Ok(out) => out,
                Err(NnError::NonFinite(_)) => return Err(NnError::Diverged { epoch, step }),
                Err(other) => return Err(other),
            };
            if !loss.is_finite() {
                return Err(NnError::Diverged { epoch, step });
            }
            sgd_step(&mut params, &mut velocity, &grads, cfg);
        }
        if !params.is_finite() {
            return Err(NnError::Diverged {
                epoch,
                step: usize::MAX,
            });
        }
    }

    let val_accuracy = evaluate(&params, val_ds)?;
    Ok(TrainRun {
        params,
        val_accuracy,
    })
}

fn sgd_step<S: Scalar>(
    params: &mut MlpParams<S>,
    velocity: &mut MlpParams<S>,
    grads: &MlpParams<S>,
    cfg: &TrainConfig<S>,
) {
    let (lr, mu, wd) = (cfg.learning_rate, cfg.momentum_coefficient, cfg.weight_decay);
    let update = |theta: &mut [S], v: &mut [S], g: &[S]| {
        for i in 0..theta.len() {
            let decayed = g[i] + wd * theta[i];
            v[i] = mu * v[i] - lr * decayed;
            theta[i] = theta[i] + v[i];
        }
    };
    update(params.w1.data_mut(), velocity.w1.data_mut(), grads.w1.data());
    update(&mut params.b1, &mut velocity.b1, &grads.b1);
    update(params.w2.data_mut(), velocity.w2.data_mut(), grads.w2.data());
    update(&mut params.b2, &mut velocity.b2, &grads.b2);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::data::{make_blobs, LabelNoiseConfig, NoiseKind};

    fn quick_cfg(seed: u64) -> TrainConfig<f64> {
        TrainConfig {
            learning_rate: 0.1,
            momentum_coefficient: 0.9,
            weight_decay: 5e-4,
            batch_size: 16,
            epochs: 8,
            seed,
        }
    }

    /// Loss recomputed through the forward + loss ops only, for finite
    /// differences; independent of the backprop path under test.
    fn loss_via_forward(
        params: &MlpParams<f64>,
        batch: &Matrix<f64>,
        labels: &[usize],
        distill: Option<(&Matrix<f64>, &DistillConfig<f64>)>,
    ) -> f64 {
        let logits = params.forward(batch).unwrap();
        match distill {
            None => cross_entropy_loss(&logits, labels).unwrap(),
            Some((teacher, cfg)) => {
                let dt = match cfg.loss_kind {
                    DistillLossKind::MseLogit => mse_logit_loss(&logits, teacher).unwrap(),
                    DistillLossKind::KlDivergence => {
                        kl_distill_loss(&logits, teacher, cfg.temperature).unwrap()
                    }
                };
                if cfg.alpha == 1.0 {
                    cross_entropy_loss(&logits, labels).unwrap()
                } else if cfg.alpha == 0.0 {
                    dt
                } else {
                    combined_loss(cross_entropy_loss(&logits, labels).unwrap(), dt, cfg.alpha)
                }
            }
        }
    }

    fn check_gradients_fd(
        params: &MlpParams<f64>,
        batch: &Matrix<f64>,
        labels: &[usize],
        distill: Option<(&Matrix<f64>, &DistillConfig<f64>)>,
    ) {
        let term = distill.map(|(t, c)| DistillTerm {
            teacher_logits: t,
            config: c,
        });
        let (grads, _) = gradients(params, batch, labels, term).unwrap();
        let analytic = grads.flatten();
        let flat = params.flatten();
        let (d, h, c) = params.dims();
        let eps = 1e-5;
        for i in 0..flat.len() {
            let mut plus = flat.clone();
            plus[i] += eps;
            let mut minus = flat.clone();
            minus[i] -= eps;
            let p_plus = MlpParams::from_flat(d, h, c, &plus).unwrap();
            let p_minus = MlpParams::from_flat(d, h, c, &minus).unwrap();
            let fd = (loss_via_forward(&p_plus, batch, labels, distill)
                - loss_via_forward(&p_minus, batch, labels, distill))
                / (2.0 * eps);
            let rel = (analytic[i] - fd).abs() / fd.abs().max(1e-8);
            assert!(
                rel <= 1e-4,
                "coordinate {i}: analytic {} vs fd {fd} (rel {rel})",
                analytic[i]
            );
        }
    }

    fn random_case(seed: u64) -> (MlpParams<f64>, Matrix<f64>, Vec<usize>, Matrix<f64>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (d, h, c, b) = (4, 5, 3, 6);
        let params = MlpParams::init(d, h, c, seed ^ 0xfeed);
        let teacher = MlpParams::init(d, h, c, seed ^ 0xbeef);
        let data: Vec<f64> = (0..b * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let batch = Matrix::from_vec(b, d, data).unwrap();
        let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..c)).collect();
        let t_logits = teacher.forward(&batch).unwrap();
        (params, batch, labels, t_logits)
    }

    #[test]
    fn gradients_match_finite_differences_task_loss() {
        for seed in 0..3 {
            let (params, batch, labels, _) = random_case(seed);
            check_gradients_fd(&params, &batch, &labels, None);
        }
    }

    #[test]
    fn gradients_match_finite_differences_mse_blend() {
        let cfg = DistillConfig::new(0.5, DistillLossKind::MseLogit, 4.0);
        for seed in 10..13 {
            let (params, batch, labels, t_logits) = random_case(seed);
            check_gradients_fd(&params, &batch, &labels, Some((&t_logits, &cfg)));
        }
    }

    #[test]
    fn gradients_match_finite_differences_kl_blend() {
        let cfg = DistillConfig::new(0.3, DistillLossKind::KlDivergence, 4.0);
        for seed in 20..23 {
            let (params, batch, labels, t_logits) = random_case(seed);
            check_gradients_fd(&params, &batch, &labels, Some((&t_logits, &cfg)));
        }
    }

    #[test]
    fn output_bias_gradient_vanishes_at_the_symmetric_stationary_point() {
        // All-zero weights + balanced classes: softmax is uniform, so the
        // output-layer bias gradient cancels exactly.
        let params = MlpParams::<f64>::zeros(3, 4, 2);
        let batch = Matrix::from_vec(4, 3, vec![0.5; 12]).unwrap();
        let labels = vec![0, 1, 0, 1];
        let (grads, _) = gradients(&params, &batch, &labels, None).unwrap();
        for g in &grads.b2 {
            assert!(g.abs() < 1e-10);
        }
    }

    #[test]
    fn alpha_one_gradients_ignore_the_teacher_bitwise() {
        let cfg = DistillConfig::new(1.0, DistillLossKind::MseLogit, 4.0);
        let (params, batch, labels, t_logits) = random_case(31);
        let (with_teacher, l1) = gradients(
            &params,
            &batch,
            &labels,
            Some(DistillTerm {
                teacher_logits: &t_logits,
                config: &cfg,
            }),
        )
        .unwrap();
        let (without, l2) = gradients(&params, &batch, &labels, None).unwrap();
        assert_eq!(with_teacher, without);
        assert_eq!(l1, l2);
    }

    #[test]
    fn alpha_zero_gradients_ignore_labels_bitwise() {
        let cfg = DistillConfig::new(0.0, DistillLossKind::MseLogit, 4.0);
        let (params, batch, labels, t_logits) = random_case(32);
        let permuted: Vec<usize> = labels.iter().map(|&l| (l + 1) % 3).collect();
        let (g1, l1) = gradients(
            &params,
            &batch,
            &labels,
            Some(DistillTerm {
                teacher_logits: &t_logits,
                config: &cfg,
            }),
        )
        .unwrap();
        let (g2, l2) = gradients(
            &params,
            &batch,
            &permuted,
            Some(DistillTerm {
                teacher_logits: &t_logits,
                config: &cfg,
            }),
        )
        .unwrap();
        assert_eq!(g1, g2);
        assert_eq!(l1, l2);
    }

    #[test]
    fn zero_epochs_return_init_unchanged() {
        let ds: Dataset<f64> = make_blobs(40, 3, 2, 4.0, 1).unwrap();
        let (train_ds, val_ds) = ds.split_at(30).unwrap();
        let init = MlpParams::init(3, 4, 2, 77);
        let mut cfg = quick_cfg(0);
        cfg.epochs = 0;
        let run = train(&train_ds, &val_ds, &cfg, &init, None).unwrap();
        assert_eq!(run.params, init);
        assert_eq!(run.val_accuracy, evaluate(&init, &val_ds).unwrap());
    }

    #[test]
    fn separable_blobs_train_to_high_accuracy() {
        let ds: Dataset<f64> = make_blobs(400, 5, 3, 6.0, 3).unwrap();
        let (train_ds, val_ds) = ds.split_at(300).unwrap();
        let init = MlpParams::init(5, 16, 3, 5);
        let run = train(&train_ds, &val_ds, &quick_cfg(9), &init, None).unwrap();
        assert!(run.val_accuracy >= 0.95, "accuracy {}", run.val_accuracy);
    }

    #[test]
    fn chance_accuracy_on_unseparated_blobs() {
        let ds: Dataset<f64> = make_blobs(600, 4, 2, 0.0, 13).unwrap();
        let (train_ds, val_ds) = ds.split_at(400).unwrap();
        let init = MlpParams::init(4, 8, 2, 21);
        let run = train(&train_ds, &val_ds, &quick_cfg(4), &init, None).unwrap();
        assert!(
            (run.val_accuracy - 0.5).abs() <= 0.1,
            "accuracy {}",
            run.val_accuracy
        );
    }

    #[test]
    fn training_is_bit_deterministic_per_seed() {
        let ds: Dataset<f64> = make_blobs(120, 4, 3, 2.0, 8).unwrap();
        let (train_ds, val_ds) = ds.split_at(90).unwrap();
        let init = MlpParams::init(4, 8, 3, 55);
        let a = train(&train_ds, &val_ds, &quick_cfg(2), &init, None).unwrap();
        let b = train(&train_ds, &val_ds, &quick_cfg(2), &init, None).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.val_accuracy, b.val_accuracy);
    }

    #[test]
    fn alpha_one_training_trajectory_matches_teacherless_bitwise() {
        let ds: Dataset<f64> = make_blobs(80, 3, 2, 2.0, 17).unwrap();
        let (train_ds, val_ds) = ds.split_at(60).unwrap();
        let init = MlpParams::init(3, 6, 2, 3);
        let teacher_params = MlpParams::init(3, 6, 2, 4);
        let dcfg = DistillConfig::new(1.0, DistillLossKind::MseLogit, 4.0);
        let with = train(
            &train_ds,
            &val_ds,
            &quick_cfg(6),
            &init,
            Some(Teacher {
                params: &teacher_params,
                config: &dcfg,
            }),
        )
        .unwrap();
        let without = train(&train_ds, &val_ds, &quick_cfg(6), &init, None).unwrap();
        assert_eq!(with.params, without.params);
    }

    #[test]
    fn alpha_zero_training_is_invariant_to_label_permutation() {
        let ds: Dataset<f64> = make_blobs(80, 3, 2, 2.0, 19).unwrap();
        let permuted = ds
            .inject_label_noise(&LabelNoiseConfig {
                kind: NoiseKind::Asymmetric,
                ratio: 1.0,
                seed: 0,
            })
            .unwrap();
        let (train_a, val) = ds.split_at(60).unwrap();
        let (train_b, _) = permuted.split_at(60).unwrap();
        let init = MlpParams::init(3, 6, 2, 3);
        let teacher_params = MlpParams::init(3, 6, 2, 4);
        let dcfg = DistillConfig::new(0.0, DistillLossKind::MseLogit, 4.0);
        let a = train(
            &train_a,
            &val,
            &quick_cfg(6),
            &init,
            Some(Teacher {
                params: &teacher_params,
                config: &dcfg,
            }),
        )
        .unwrap();
        let b = train(
            &train_b,
            &val,
            &quick_cfg(6),
            &init,
            Some(Teacher {
                params: &teacher_params,
                config: &dcfg,
            }),
        )
        .unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn runaway_learning_rate_reports_divergence() {
        let ds: Dataset<f64> = make_blobs(30, 3, 2, 2.0, 23).unwrap();
        let (train_ds, val_ds) = ds.split_at(20).unwrap();
        let init = MlpParams::init(3, 6, 2, 3);
        let cfg = TrainConfig {
            learning_rate: 1e20,
            momentum_coefficient: 0.0,
            weight_decay: 0.0,
            batch_size: 10,
            epochs: 20,
            seed: 1,
        };
        let err = train(&train_ds, &val_ds, &cfg, &init, None).unwrap_err();
        assert!(matches!(err, NnError::Diverged { .. }), "got {err:?}");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cfg = TrainConfig {
            learning_rate: 0.1,
            momentum_coefficient: 1.0,
            weight_decay: 0.0,
            batch_size: 4,
            epochs: 1,
            seed: 0,
        };
        assert!(cfg.validate(10).is_err());
        let cfg2 = TrainConfig::<f64> {
            learning_rate: 0.1,
            momentum_coefficient: 0.5,
            weight_decay: 0.0,
            batch_size: 11,
            epochs: 1,
            seed: 0,
        };
        assert!(cfg2.validate(10).is_err());
    }
}
