//! Task and distillation losses.
//!
//! The task loss is mean cross-entropy over the batch. Distillation compares
//! raw logits for MSE and temperature-scaled probabilities for KL with the
//! usual T^2 compensation. Training minimizes the blend
//! `alpha * task + (1 - alpha) * distill`.

use super::{Matrix, NnError};
use crate::scalar::Scalar;

/// Numerically stable softmax (max-shifted); shift-invariant and safe at
/// logit magnitudes of 1e3 and beyond.
pub fn softmax<S: Scalar>(logits: &[S]) -> Result<Vec<S>, NnError> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(NnError::NonFinite("softmax input".into()));
    }
    let max = logits
        .iter()
        .copied()
        .fold(S::neg_infinity(), |a, b| if b > a { b } else { a });
    let exps: Vec<S> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum = exps.iter().fold(S::zero(), |a, &b| a + b);
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

fn log_sum_exp<S: Scalar>(row: &[S]) -> S {
    let max = row
        .iter()
        .copied()
        .fold(S::neg_infinity(), |a, b| if b > a { b } else { a });
    let sum = row.iter().fold(S::zero(), |a, &v| a + (v - max).exp());
    max + sum.ln()
}

/// Mean over rows of `-log softmax(logits)[label]`.
pub fn cross_entropy_loss<S: Scalar>(logits: &Matrix<S>, labels: &[usize]) -> Result<S, NnError> {
    if logits.rows() != labels.len() {
        return Err(NnError::ShapeMismatch(format!(
            "{} logit rows vs {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    let c = logits.cols();
    let mut total = S::zero();
    for (i, &label) in labels.iter().enumerate() {
        if label >= c {
            return Err(NnError::LabelOutOfRange {
                label,
                n_classes: c,
            });
        }
        let row = logits.row(i);
        total = total + log_sum_exp(row) - row[label];
    }
    Ok(total / S::of_usize(labels.len()))
}

/// Mean over rows of the squared Euclidean distance between the student and
/// teacher logit vectors.
pub fn mse_logit_loss<S: Scalar>(
    student_logits: &Matrix<S>,
    teacher_logits: &Matrix<S>,
) -> Result<S, NnError> {
    check_same_shape(student_logits, teacher_logits)?;
    let mut total = S::zero();
    for (s, t) in student_logits.data().iter().zip(teacher_logits.data()) {
        let diff = *s - *t;
        total = total + diff * diff;
    }
    Ok(total / S::of_usize(student_logits.rows()))
}

/// Mean over rows of `T^2 * KL(softmax(teacher/T) || softmax(student/T))`.
pub fn kl_distill_loss<S: Scalar>(
    student_logits: &Matrix<S>,
    teacher_logits: &Matrix<S>,
    temperature: S,
) -> Result<S, NnError> {
    check_same_shape(student_logits, teacher_logits)?;
    if !(temperature > S::zero()) {
        return Err(NnError::InvalidConfig("temperature must be > 0".into()));
    }
    let mut total = S::zero();
    for i in 0..student_logits.rows() {
        let s_scaled: Vec<S> = student_logits.row(i).iter().map(|&v| v / temperature).collect();
        let t_scaled: Vec<S> = teacher_logits.row(i).iter().map(|&v| v / temperature).collect();
        let s_lse = log_sum_exp(&s_scaled);
        let t_lse = log_sum_exp(&t_scaled);
        let mut row_kl = S::zero();
        for (&sv, &tv) in s_scaled.iter().zip(&t_scaled) {
            let log_pt = tv - t_lse;
            let pt = log_pt.exp();
            if pt > S::zero() {
                // p log(p/q); terms with p = 0 contribute 0 in the limit.
                row_kl = row_kl + pt * (log_pt - (sv - s_lse));
            }
        }
        total = total + temperature * temperature * row_kl;
    }
    Ok(total / S::of_usize(student_logits.rows()))
}

/// The balanced objective: `alpha * gt + (1 - alpha) * dt`.
pub fn combined_loss<S: Scalar>(gt: S, dt: S, alpha: S) -> S {
    alpha * gt + (S::one() - alpha) * dt
}

fn check_same_shape<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>) -> Result<(), NnError> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(NnError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}
