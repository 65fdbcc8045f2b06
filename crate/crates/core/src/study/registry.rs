//! The checkpoint registry Θ and top-K teacher/student selection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::StudyError;
use crate::nn::MlpParams;
use crate::scalar::Scalar;

/// Which loss scheme produced a trial: `Warmup` trains on the task loss
/// alone, `Boss` trains the distillation blend.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Boss,
}

/// Trained parameters retained from a successful trial.
#[derive(Clone, Debug)]
pub struct Checkpoint<S> {
    pub trial_id: u64,
    pub params: MlpParams<S>,
    pub objective: S,
    pub phase: Phase,
}

/// The set Θ of all checkpoints; failed trials are never checkpointed.
#[derive(Clone, Debug, Default)]
pub struct CheckpointRegistry<S> {
    checkpoints: Vec<Checkpoint<S>>,
}

impl<S: Scalar> CheckpointRegistry<S> {
    pub fn new() -> Self {
        Self {
            checkpoints: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkpoints.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Checkpoint<S>> {
        self.checkpoints.iter()
    }

    pub fn get(&self, trial_id: u64) -> Option<&Checkpoint<S>> {
        self.checkpoints.iter().find(|c| c.trial_id == trial_id)
    }

    pub fn insert(&mut self, ckpt: Checkpoint<S>) -> Result<(), StudyError> {
        if !ckpt.objective.is_finite() {
            return Err(StudyError::BadCheckpoint(format!(
                "trial {} has non-finite objective",
                ckpt.trial_id
            )));
        }
        if self.get(ckpt.trial_id).is_some() {
            return Err(StudyError::BadCheckpoint(format!(
                "trial {} already checkpointed",
                ckpt.trial_id
            )));
        }
        self.checkpoints.push(ckpt);
        Ok(())
    }

    /// Up to `k` checkpoints with the highest objective, descending; ties go
    /// to the lower trial id.
    pub fn top_k(&self, k: usize) -> Result<Vec<&Checkpoint<S>>, StudyError> {
        if self.checkpoints.is_empty() {
            return Err(StudyError::EmptyRegistry);
        }
        if k == 0 {
            return Err(StudyError::InvalidConfig("top_k needs k >= 1".into()));
        }
        let mut refs: Vec<&Checkpoint<S>> = self.checkpoints.iter().collect();
        refs.sort_by(|a, b| {
            b.objective
                .partial_cmp(&a.objective)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.trial_id.cmp(&b.trial_id))
        });
        refs.truncate(k);
        Ok(refs)
    }

    /// The best checkpoint overall (ties to the lower trial id).
    pub fn best(&self) -> Option<&Checkpoint<S>> {
        self.top_k(1).ok().and_then(|v| v.into_iter().next())
    }
}

/// The outcome of drawing teacher and student-init checkpoints from the
/// top-K candidates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Selection {
    pub teacher_id: u64,
    pub student_init_id: u64,
    /// Set when only one candidate existed, forcing teacher = student.
    pub degenerate: bool,
}

/// Two uniform draws without replacement: teacher and student always come
/// from different checkpoints when at least two candidates exist. A single
/// candidate fills both roles and is flagged.
pub fn select_teacher_student<S: Scalar, R: Rng + ?Sized>(
    candidates: &[&Checkpoint<S>],
    rng: &mut R,
) -> Result<Selection, StudyError> {
    match candidates.len() {
        0 => Err(StudyError::EmptyRegistry),
        1 => Ok(Selection {
            teacher_id: candidates[0].trial_id,
            student_init_id: candidates[0].trial_id,
            degenerate: true,
        }),
        n => {
            let teacher = rng.gen_range(0..n);
            let mut student = rng.gen_range(0..n - 1);
            if student >= teacher {
                student += 1;
            }
            Ok(Selection {
                teacher_id: candidates[teacher].trial_id,
                student_init_id: candidates[student].trial_id,
                degenerate: false,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn registry_with(objs: &[f64]) -> CheckpointRegistry<f64> {
        let mut reg = CheckpointRegistry::new();
        for (i, &o) in objs.iter().enumerate() {
            reg.insert(Checkpoint {
                trial_id: i as u64,
                params: MlpParams::zeros(2, 2, 2),
                objective: o,
                phase: Phase::Warmup,
            })
            .unwrap();
        }
        reg
    }

    #[test]
    fn top_k_returns_all_when_k_exceeds_size() {
        let reg = registry_with(&[0.7, 0.9, 0.8]);
        let top = reg.top_k(8).unwrap();
        let objs: Vec<f64> = top.iter().map(|c| c.objective).collect();
        assert_eq!(objs, vec![0.9, 0.8, 0.7]);
    }

    #[test]
    fn top_k_truncates_in_order() {
        let reg = registry_with(&[0.9, 0.8, 0.7]);
        let top = reg.top_k(2).unwrap();
        let objs: Vec<f64> = top.iter().map(|c| c.objective).collect();
        assert_eq!(objs, vec![0.9, 0.8]);
    }

    #[test]
    fn top_k_tie_breaks_to_lower_trial_id() {
        let reg = registry_with(&[0.9, 0.9, 0.8]);
        let top = reg.top_k(2).unwrap();
        let ids: Vec<u64> = top.iter().map(|c| c.trial_id).collect();
        assert_eq!(ids, vec![0, 1]);
    }

    #[test]
    fn top_k_matches_full_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        use rand::Rng;
        let objs: Vec<f64> = (0..100).map(|_| rng.gen::<f64>()).collect();
        let reg = registry_with(&objs);
        let top = reg.top_k(8).unwrap();

        let mut oracle: Vec<(f64, usize)> =
            objs.iter().copied().enumerate().map(|(i, o)| (o, i)).collect();
        oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for (got, want) in top.iter().zip(oracle.iter().take(8)) {
            assert_eq!(got.trial_id, want.1 as u64);
        }
    }

    #[test]
    fn empty_registry_errors() {
        let reg: CheckpointRegistry<f64> = CheckpointRegistry::new();
        assert!(matches!(reg.top_k(3), Err(StudyError::EmptyRegistry)));
    }

    #[test]
    fn rejects_duplicate_and_non_finite_checkpoints() {
        let mut reg = registry_with(&[0.5]);
        assert!(reg
            .insert(Checkpoint {
                trial_id: 0,
                params: MlpParams::zeros(2, 2, 2),
                objective: 0.1,
                phase: Phase::Warmup,
            })
            .is_err());
        assert!(reg
            .insert(Checkpoint {
                trial_id: 9,
                params: MlpParams::zeros(2, 2, 2),
                objective: f64::NEG_INFINITY,
                phase: Phase::Warmup,
            })
            .is_err());
    }

    #[test]
    fn single_candidate_selection_is_degenerate() {
        let reg = registry_with(&[0.4]);
        let top = reg.top_k(8).unwrap();
        let sel = select_teacher_student(&top, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(sel.teacher_id, sel.student_init_id);
        assert!(sel.degenerate);
    }

    #[test]
    fn selection_never_repeats_with_two_or_more() {
        let reg = registry_with(&[0.1, 0.2, 0.3, 0.4]);
        let top = reg.top_k(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let sel = select_teacher_student(&top, &mut rng).unwrap();
            assert_ne!(sel.teacher_id, sel.student_init_id);
            assert!(!sel.degenerate);
        }
    }

    #[test]
    fn ordered_pairs_are_uniform() {
        // 8 candidates -> 56 ordered pairs; each should appear with
        // frequency 1/56 within 0.005 over 10k draws.
        let objs: Vec<f64> = (0..8).map(|i| i as f64 / 10.0).collect();
        let reg = registry_with(&objs);
        let top = reg.top_k(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut counts = std::collections::HashMap::new();
        let draws = 10_000;
        for _ in 0..draws {
            let sel = select_teacher_student(&top, &mut rng).unwrap();
            *counts.entry((sel.teacher_id, sel.student_init_id)).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 56);
        for (&pair, &count) in &counts {
            let freq = count as f64 / draws as f64;
            assert!(
                (freq - 1.0 / 56.0).abs() <= 0.005,
                "pair {pair:?} frequency {freq}"
            );
        }
    }
}
