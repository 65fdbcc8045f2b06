//! The d -> H -> C ReLU perceptron: parameters, forward pass, accuracy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, NnError};
use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self, NnError> {
        if data.len() != rows * cols {
            return Err(NnError::ShapeMismatch(format!(
                "matrix {}x{} needs {} values, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Weights and biases of the one-hidden-layer MLP.
///
/// Layout: `w1` is H x d, `b1` has H entries, `w2` is C x H, `b2` has C
/// entries. Logits are `w2 * relu(w1 * x + b1) + b2` per row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams<S> {
    pub w1: Matrix<S>,
    pub b1: Vec<S>,
    pub w2: Matrix<S>,
    pub b2: Vec<S>,
}

impl<S: Scalar> MlpParams<S> {
    /// Dimensions as (input, hidden, classes).
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.w1.cols(), self.w1.rows(), self.w2.rows())
    }

    pub fn zeros(d: usize, hidden: usize, n_classes: usize) -> Self {
        Self {
            w1: Matrix::zeros(hidden, d),
            b1: vec![S::zero(); hidden],
            w2: Matrix::zeros(n_classes, hidden),
            b2: vec![S::zero(); n_classes],
        }
    }

    /// Seeded Glorot-uniform weight init: each layer's weights are uniform
    /// on [-s, s] with s = sqrt(6 / (fan_in + fan_out)); biases start at 0.
    pub fn init(d: usize, hidden: usize, n_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = |rows: usize, cols: usize| -> Matrix<S> {
            let s = (6.0 / (rows + cols) as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| S::of(rng.gen_range(-s..=s)))
                .collect();
            Matrix { rows, cols, data }
        };
        Self {
            w1: layer(hidden, d),
            b1: vec![S::zero(); hidden],
            w2: layer(n_classes, hidden),
            b2: vec![S::zero(); n_classes],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite()
            && self.w2.is_finite()
            && self.b1.iter().all(|v| v.is_finite())
            && self.b2.iter().all(|v| v.is_finite())
    }

    pub fn check_compatible(&self, d: usize, n_classes: usize) -> Result<(), NnError> {
        let (pd, _, pc) = self.dims();
        if pd != d || pc != n_classes {
            return Err(NnError::ShapeMismatch(format!(
                "parameters expect {pd} features / {pc} classes, data has {d} / {n_classes}"
            )));
        }
        if self.b1.len() != self.w1.rows() || self.w2.cols() != self.w1.rows() {
            return Err(NnError::ShapeMismatch("hidden layer sizes disagree".into()));
        }
        if self.b2.len() != self.w2.rows() {
            return Err(NnError::ShapeMismatch("output layer sizes disagree".into()));
        }
        Ok(())
    }

    /// Pre-activations of the hidden layer: `x * w1^T + b1`, one row per
    /// input row.
    pub(super) fn hidden_pre(&self, x: &Matrix<S>) -> Result<Matrix<S>, NnError> {
        let (d, h, _) = self.dims();
        if x.cols() != d {
            return Err(NnError::ShapeMismatch(format!(
                "input has {} features, parameters expect {d}",
                x.cols()
            )));
        }
        let mut out = Matrix::zeros(x.rows(), h);
        for i in 0..x.rows() {
            let xi = x.row(i);
            let oi = out.row_mut(i);
            for (j, oj) in oi.iter_mut().enumerate() {
                let wj = self.w1.row(j);
                let mut acc = self.b1[j];
                for (w, v) in wj.iter().zip(xi) {
                    acc = acc + *w * *v;
                }
                *oj = acc;
            }
        }
        Ok(out)
    }

    pub(super) fn logits_from_hidden(&self, hidden: &Matrix<S>) -> Matrix<S> {
        let c = self.w2.rows();
        let mut out = Matrix::zeros(hidden.rows(), c);
        for i in 0..hidden.rows() {
            let hi = hidden.row(i);
            let oi = out.row_mut(i);
            for (k, ok) in oi.iter_mut().enumerate() {
                let wk = self.w2.row(k);
                let mut acc = self.b2[k];
                for (w, v) in wk.iter().zip(hi) {
                    acc = acc + *w * *v;
                }
                *ok = acc;
            }
        }
        out
    }

    /// Forward pass: logits for a batch of input rows.
    pub fn forward(&self, x: &Matrix<S>) -> Result<Matrix<S>, NnError> {
        let mut hidden = self.hidden_pre(x)?;
        for v in hidden.data_mut() {
            if *v < S::zero() {
                *v = S::zero();
            }
        }
        Ok(self.logits_from_hidden(&hidden))
    }

    /// Flat views used by the persistence layer and gradient checks.
    pub fn flatten(&self) -> Vec<S> {
        let mut out = Vec::new();
        out.extend_from_slice(self.w1.data());
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(self.w2.data());
        out.extend_from_slice(&self.b2);
        out
    }

    pub fn from_flat(d: usize, hidden: usize, n_classes: usize, flat: &[S]) -> Result<Self, NnError> {
        let expected = hidden * d + hidden + n_classes * hidden + n_classes;
        if flat.len() != expected {
            return Err(NnError::ShapeMismatch(format!(
                "expected {expected} parameters, got {}",
                flat.len()
            )));
        }
        let mut at = 0;
        let mut take = |len: usize| {
            let s = flat[at..at + len].to_vec();
            at += len;
            s
        };
        Ok(Self {
            w1: Matrix::from_vec(hidden, d, take(hidden * d))?,
            b1: take(hidden),
            w2: Matrix::from_vec(n_classes, hidden, take(n_classes * hidden))?,
            b2: take(n_classes),
        })
    }
}

/// Top-1 accuracy; argmax ties break toward the lowest class id.
pub fn evaluate<S: Scalar>(params: &MlpParams<S>, ds: &Dataset<S>) -> Result<S, NnError> {
    params.check_compatible(ds.dim(), ds.n_classes())?;
    let mut correct = 0usize;
    let mut x = Matrix::zeros(1, ds.dim());
    for i in 0..ds.len() {
        x.row_mut(0).copy_from_slice(ds.row(i));
        let logits = params.forward(&x)?;
        let row = logits.row(0);
        let mut arg = 0usize;
        for (k, &v) in row.iter().enumerate().skip(1) {
            if v > row[arg] {
                arg = k;
            }
        }
        if arg == ds.label(i) {
            correct += 1;
        }
    }
    Ok(S::of_usize(correct) / S::of_usize(ds.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::data::{make_blobs, SplitTag};
    use crate::nn::Dataset;

    #[test]
    fn zero_params_give_zero_logits() {
        let params = MlpParams::<f64>::zeros(3, 4, 2);
        let x = Matrix::from_vec(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.0, -1.0]).unwrap();
        let logits = params.forward(&x).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batched_forward_matches_single_rows() {
        let params = MlpParams::<f64>::init(4, 6, 3, 99);
        let data: Vec<f64> = (0..20).map(|i| (i as f64) * 0.37 - 3.0).collect();
        let batch = Matrix::from_vec(5, 4, data.clone()).unwrap();
        let batched = params.forward(&batch).unwrap();
        for i in 0..5 {
            let single = Matrix::from_vec(1, 4, data[i * 4..(i + 1) * 4].to_vec()).unwrap();
            let one = params.forward(&single).unwrap();
            for (a, b) in batched.row(i).iter().zip(one.row(0)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_matches_double_loop_oracle() {
        let params = MlpParams::<f64>::init(5, 7, 4, 123);
        let mut rng = {
            use rand::SeedableRng;
            rand_chacha::ChaCha8Rng::seed_from_u64(5)
        };
        use rand::Rng;
        let data: Vec<f64> = (0..15).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x = Matrix::from_vec(3, 5, data).unwrap();
        let got = params.forward(&x).unwrap();

        // Straightforward re-computation, scalar by scalar.
        for i in 0..3 {
            let mut hidden = vec![0.0f64; 7];
            for (j, h) in hidden.iter_mut().enumerate() {
                let mut acc = params.b1[j];
                for k in 0..5 {
                    acc += params.w1.row(j)[k] * x.row(i)[k];
                }
                *h = acc.max(0.0);
            }
            for c in 0..4 {
                let mut acc = params.b2[c];
                for (j, h) in hidden.iter().enumerate() {
                    acc += params.w2.row(c)[j] * h;
                }
                assert!((got.row(i)[c] - acc).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = MlpParams::<f64>::init(3, 4, 2, 7);
        let b = MlpParams::<f64>::init(3, 4, 2, 7);
        assert_eq!(a, b);
        let c = MlpParams::<f64>::init(3, 4, 2, 8);
        assert_ne!(a, c);
        let s1 = (6.0f64 / (3.0 + 4.0)).sqrt();
        assert!(a.w1.data().iter().all(|v| v.abs() <= s1));
        assert!(a.b1.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn evaluate_breaks_argmax_ties_toward_class_zero() {
        // All-zero params on a balanced 2-class set: every row predicts 0.
        let ds: Dataset<f64> = make_blobs(10, 3, 2, 5.0, 2).unwrap();
        let params = MlpParams::<f64>::zeros(3, 4, 2);
        let acc = evaluate(&params, &ds).unwrap();
        assert_eq!(acc, 0.5);
    }

    #[test]
    fn evaluate_matches_per_row_oracle() {
        let ds: Dataset<f64> = make_blobs(60, 4, 3, 3.0, 11).unwrap();
        let params = MlpParams::<f64>::init(4, 8, 3, 31);
        let acc = evaluate(&params, &ds).unwrap();

        let mut correct = 0;
        for i in 0..ds.len() {
            let x = Matrix::from_vec(1, 4, ds.row(i).to_vec()).unwrap();
            let logits = params.forward(&x).unwrap();
            let row = logits.row(0);
            let mut arg = 0;
            for k in 1..3 {
                if row[k] > row[arg] {
                    arg = k;
                }
            }
            if arg == ds.label(i) {
                correct += 1;
            }
        }
        assert_eq!(acc, correct as f64 / 60.0);
    }

    #[test]
    fn flatten_round_trips() {
        let params = MlpParams::<f64>::init(3, 5, 2, 17);
        let flat = params.flatten();
        let back = MlpParams::from_flat(3, 5, 2, &flat).unwrap();
        assert_eq!(params, back);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let params = MlpParams::<f64>::zeros(3, 4, 2);
        let x = Matrix::<f64>::zeros(2, 5);
        assert!(matches!(
            params.forward(&x),
            Err(NnError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn split_tag_is_carried() {
        let ds: Dataset<f64> = make_blobs(10, 2, 2, 1.0, 0).unwrap();
        assert_eq!(ds.split_tag, SplitTag::Train);
    }
}
