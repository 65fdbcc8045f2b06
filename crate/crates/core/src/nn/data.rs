//! Synthetic datasets, label-noise injection, and delimited-file I/O.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::NnError;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Val,
}

/// A labeled feature matrix: `n` rows of `d` features with class ids in
/// `[0, n_classes)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<S> {
    features: Vec<S>,
    labels: Vec<usize>,
    n: usize,
    d: usize,
    n_classes: usize,
    pub split_tag: SplitTag,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(
        features: Vec<S>,
        labels: Vec<usize>,
        d: usize,
        n_classes: usize,
        split_tag: SplitTag,
    ) -> Result<Self, NnError> {
        let n = labels.len();
        if n == 0 {
            return Err(NnError::InvalidDataset("dataset must be non-empty".into()));
        }
        if features.len() != n * d {
            return Err(NnError::ShapeMismatch(format!(
                "feature buffer holds {} values, expected {} ({} rows x {} features)",
                features.len(),
                n * d,
                n,
                d
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("dataset features".into()));
        }
        for &label in &labels {
            if label >= n_classes {
                return Err(NnError::LabelOutOfRange { label, n_classes });
            }
        }
        Ok(Self {
            features,
            labels,
            n,
            d,
            n_classes,
            split_tag,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Splits off the first `n_head` rows; the head keeps this dataset's
    /// tag and the tail is tagged as the validation split.
    pub fn split_at(&self, n_head: usize) -> Result<(Dataset<S>, Dataset<S>), NnError> {
        if n_head == 0 || n_head >= self.n {
            return Err(NnError::InvalidDataset(format!(
                "cannot split {} rows at {}",
                self.n, n_head
            )));
        }
        let head = Dataset {
            features: self.features[..n_head * self.d].to_vec(),
            labels: self.labels[..n_head].to_vec(),
            n: n_head,
            d: self.d,
            n_classes: self.n_classes,
            split_tag: self.split_tag,
        };
        let tail = Dataset {
            features: self.features[n_head * self.d..].to_vec(),
            labels: self.labels[n_head..].to_vec(),
            n: self.n - n_head,
            d: self.d,
            n_classes: self.n_classes,
            split_tag: SplitTag::Val,
        };
        Ok((head, tail))
    }

    /// Raises the class count, e.g. when a loaded validation file happens
    /// not to contain the last class.
    pub fn widen_classes(self, n_classes: usize) -> Result<Self, NnError> {
        if n_classes < self.n_classes {
            return Err(NnError::InvalidDataset(format!(
                "cannot narrow {} classes to {}",
                self.n_classes, n_classes
            )));
        }
        Ok(Self { n_classes, ..self })
    }

    /// Writes the delimited form: header `f0,..,f{d-1},label`, one row per
    /// sample.
    pub fn to_delimited(&self, path: &Path) -> Result<(), NnError> {
        let mut out = Vec::new();
        let header: Vec<String> = (0..self.d)
            .map(|i| format!("f{i}"))
            .chain(std::iter::once("label".to_string()))
            .collect();
        writeln!(out, "{}", header.join(",")).expect("in-memory write");
        for i in 0..self.n {
            let mut fields: Vec<String> = self.row(i).iter().map(|v| format!("{v}")).collect();
            fields.push(self.labels[i].to_string());
            writeln!(out, "{}", fields.join(",")).expect("in-memory write");
        }
        std::fs::write(path, out).map_err(|e| NnError::DatasetFile(e.to_string()))
    }

    /// Loads the delimited form written by `to_delimited`. The class count
    /// is inferred as `max(label) + 1`.
    pub fn from_delimited(path: &Path, split_tag: SplitTag) -> Result<Self, NnError> {
        let file = std::fs::File::open(path).map_err(|e| NnError::DatasetFile(e.to_string()))?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| NnError::DatasetFile("empty dataset file".into()))?
            .map_err(|e| NnError::DatasetFile(e.to_string()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 2 || cols.last() != Some(&"label") {
            return Err(NnError::DatasetFile(
                "header must list feature columns followed by `label`".into(),
            ));
        }
        let d = cols.len() - 1;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| NnError::DatasetFile(e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != d + 1 {
                return Err(NnError::DatasetFile(format!(
                    "line {}: expected {} fields, got {}",
                    lineno + 2,
                    d + 1,
                    fields.len()
                )));
            }
            for f in &fields[..d] {
                let v: f64 = f.parse().map_err(|_| {
                    NnError::DatasetFile(format!("line {}: bad feature `{f}`", lineno + 2))
                })?;
                features.push(S::of(v));
            }
            let label: usize = fields[d].parse().map_err(|_| {
                NnError::DatasetFile(format!("line {}: bad label `{}`", lineno + 2, fields[d]))
            })?;
            labels.push(label);
        }
        let n_classes = labels.iter().max().map(|m| m + 1).unwrap_or(0);
        Dataset::new(features, labels, d, n_classes.max(1), split_tag)
    }
}

/// Draws `n` points from `C` isotropic unit-variance Gaussian clusters with
/// centers a pairwise distance `separation` apart, labels assigned
/// round-robin so class counts differ by at most one. Deterministic per seed.
pub fn make_blobs<S: Scalar>(
    n: usize,
    d: usize,
    n_classes: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset<S>, NnError> {
    if n_classes < 2 {
        return Err(NnError::InvalidConfig("need at least 2 classes".into()));
    }
    if d < 1 {
        return Err(NnError::InvalidConfig("need at least 1 feature".into()));
    }
    if n < n_classes {
        return Err(NnError::InvalidConfig(format!(
            "need at least one point per class ({n} points, {n_classes} classes)"
        )));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(NnError::InvalidConfig("separation must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = separation / std::f64::consts::SQRT_2;
    let centers: Vec<Vec<f64>> = if d >= n_classes {
        // Scaled basis vectors: every pair of centers is exactly
        // `separation` apart.
        (0..n_classes)
            .map(|c| {
                let mut v = vec![0.0; d];
                v[c] = radius;
                v
            })
            .collect()
    } else {
        // Random directions on the sphere of the same radius; pairwise
        // distances are `separation` in expectation.
        (0..n_classes)
            .map(|_| {
                let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.iter_mut().for_each(|x| *x *= radius / norm);
                v
            })
            .collect()
    };

    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % n_classes;
        for j in 0..d {
            let noise: f64 = rng.sample(StandardNormal);
            features.push(S::of(centers[c][j] + noise));
        }
        labels.push(c);
    }
    Dataset::new(features, labels, d, n_classes, SplitTag::Train)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Symmetric,
    Asymmetric,
}

/// Label corruption settings. Symmetric noise relabels uniformly over the
/// other classes; asymmetric noise advances to the fixed pair partner
/// `c -> (c + 1) mod C`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LabelNoiseConfig {
    pub kind: NoiseKind,
    pub ratio: f64,
    pub seed: u64,
}

impl LabelNoiseConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(NnError::InvalidConfig(format!(
                "noise ratio must lie in [0, 1], got {}",
                self.ratio
            )));
        }
        Ok(())
    }
}

impl<S: Scalar> Dataset<S> {
    /// Returns a copy with labels independently corrupted with probability
    /// `ratio`. Features are untouched; deterministic per seed.
    pub fn inject_label_noise(&self, cfg: &LabelNoiseConfig) -> Result<Dataset<S>, NnError> {
        cfg.validate()?;
        if self.n_classes < 2 {
            return Err(NnError::InvalidConfig(
                "label noise needs at least 2 classes".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let labels = self
            .labels
            .iter()
            .map(|&c| {
                let flip = rng.gen::<f64>() < cfg.ratio;
                // One offset draw per row keeps the stream layout fixed
                // across ratios.
                let offset = rng.gen_range(1..self.n_classes);
                if !flip {
                    c
                } else {
                    match cfg.kind {
                        NoiseKind::Symmetric => (c + offset) % self.n_classes,
                        NoiseKind::Asymmetric => (c + 1) % self.n_classes,
                    }
                }
            })
            .collect();
        Ok(Dataset {
            features: self.features.clone(),
            labels,
            n: self.n,
            d: self.d,
            n_classes: self.n_classes,
            split_tag: self.split_tag,
        })
    }
}
