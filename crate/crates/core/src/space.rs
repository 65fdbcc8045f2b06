//! Hyperparameter search spaces and the unit-cube transform used by the
//! surrogate.
//!
//! Density estimation operates on the unit cube `[0,1]^d`; `to_unit` and
//! `from_unit` carry configurations between native units and unit
//! coordinates. All bounds are closed on both ends.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// How a parameter is distributed over its native range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamKind {
    LogUniformFloat,
    UniformFloat,
    IntUniform,
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ParamKind::LogUniformFloat => "log-uniform-float",
            ParamKind::UniformFloat => "uniform-float",
            ParamKind::IntUniform => "int-uniform",
        };
        f.write_str(s)
    }
}

/// One named dimension of a search space, with closed native-unit bounds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamSpec<S> {
    pub name: String,
    pub kind: ParamKind,
    pub low: S,
    pub high: S,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("parameter `{name}`: bounds must be finite, got [{low}, {high}]")]
    NonFiniteBounds { name: String, low: f64, high: f64 },
    #[error("parameter `{name}`: low must be < high for float kinds, got [{low}, {high}]")]
    EmptyFloatRange { name: String, low: f64, high: f64 },
    #[error("parameter `{name}`: low must be <= high, got [{low}, {high}]")]
    ReversedIntRange { name: String, low: f64, high: f64 },
    #[error("parameter `{name}`: log-uniform requires low > 0, got low = {low}")]
    NonPositiveLogBound { name: String, low: f64 },
    #[error("parameter `{name}`: int-uniform bounds must be integers, got [{low}, {high}]")]
    NonIntegralIntBounds { name: String, low: f64, high: f64 },
    #[error("duplicate parameter name `{name}`")]
    DuplicateName { name: String },
    #[error("search space has no parameters")]
    Empty,
    #[error("value {value} for `{name}` outside [{low}, {high}]")]
    OutOfBounds {
        name: String,
        value: f64,
        low: f64,
        high: f64,
    },
    #[error("value {value} for int-uniform `{name}` is not an integer")]
    NonIntegralValue { name: String, value: f64 },
    #[error("missing parameter `{name}`")]
    MissingParam { name: String },
    #[error("unknown parameter `{name}`")]
    UnknownParam { name: String },
    #[error("unit coordinate {value} at index {index} outside [0, 1]")]
    UnitOutOfRange { index: usize, value: f64 },
    #[error("expected {expected} coordinates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Every violated invariant of a space, reported together.
#[derive(Debug, Error, Clone, PartialEq)]
pub struct SpaceReport {
    pub violations: Vec<SpaceError>,
}

impl fmt::Display for SpaceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid search space: ")?;
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl<S: Scalar> ParamSpec<S> {
    pub fn new(name: impl Into<String>, kind: ParamKind, low: S, high: S) -> Self {
        Self {
            name: name.into(),
            kind,
            low,
            high,
        }
    }

    fn violations(&self) -> Vec<SpaceError> {
        let mut out = Vec::new();
        let (low, high) = (self.low.as_f64(), self.high.as_f64());
        let name = self.name.clone();
        if !low.is_finite() || !high.is_finite() {
            out.push(SpaceError::NonFiniteBounds { name, low, high });
            return out;
        }
        match self.kind {
            ParamKind::UniformFloat | ParamKind::LogUniformFloat => {
                if !(low < high) {
                    out.push(SpaceError::EmptyFloatRange {
                        name: self.name.clone(),
                        low,
                        high,
                    });
                }
                if self.kind == ParamKind::LogUniformFloat && !(low > 0.0) {
                    out.push(SpaceError::NonPositiveLogBound {
                        name: self.name.clone(),
                        low,
                    });
                }
            }
            ParamKind::IntUniform => {
                if !(low <= high) {
                    out.push(SpaceError::ReversedIntRange {
                        name: self.name.clone(),
                        low,
                        high,
                    });
                } else if low.fract() != 0.0 || high.fract() != 0.0 {
                    out.push(SpaceError::NonIntegralIntBounds {
                        name: self.name.clone(),
                        low,
                        high,
                    });
                }
            }
        }
        out
    }

    fn contains(&self, v: S) -> bool {
        v >= self.low && v <= self.high
    }

    fn check_value(&self, v: S) -> Result<(), SpaceError> {
        if !v.is_finite() || !self.contains(v) {
            return Err(SpaceError::OutOfBounds {
                name: self.name.clone(),
                value: v.as_f64(),
                low: self.low.as_f64(),
                high: self.high.as_f64(),
            });
        }
        if self.kind == ParamKind::IntUniform && v.fract() != S::zero() {
            return Err(SpaceError::NonIntegralValue {
                name: self.name.clone(),
                value: v.as_f64(),
            });
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> S {
        match self.kind {
            ParamKind::UniformFloat => {
                let u = S::of(rng.gen::<f64>());
                self.low + u * (self.high - self.low)
            }
            ParamKind::LogUniformFloat => {
                let (ll, lh) = (self.low.ln(), self.high.ln());
                let u = S::of(rng.gen::<f64>());
                let v = (ll + u * (lh - ll)).exp();
                clamp(v, self.low, self.high)
            }
            ParamKind::IntUniform => {
                let (lo, hi) = (
                    self.low.as_f64().round() as i64,
                    self.high.as_f64().round() as i64,
                );
                S::of(rng.gen_range(lo..=hi) as f64)
            }
        }
    }

    fn to_unit(&self, v: S) -> S {
        match self.kind {
            ParamKind::UniformFloat | ParamKind::IntUniform => {
                if self.high == self.low {
                    // Degenerate int range; midpoint keeps from_unit exact.
                    S::of(0.5)
                } else {
                    (v - self.low) / (self.high - self.low)
                }
            }
            ParamKind::LogUniformFloat => {
                let (ll, lh) = (self.low.ln(), self.high.ln());
                (v.ln() - ll) / (lh - ll)
            }
        }
    }

    fn from_unit(&self, u: S) -> S {
        // Exact at the endpoints for every kind.
        match self.kind {
            ParamKind::UniformFloat => {
                if u == S::zero() {
                    self.low
                } else if u == S::one() {
                    self.high
                } else {
                    self.low + u * (self.high - self.low)
                }
            }
            ParamKind::LogUniformFloat => {
                if u == S::zero() {
                    self.low
                } else if u == S::one() {
                    self.high
                } else {
                    let (ll, lh) = (self.low.ln(), self.high.ln());
                    clamp((ll + u * (lh - ll)).exp(), self.low, self.high)
                }
            }
            ParamKind::IntUniform => {
                let raw = self.low + u * (self.high - self.low);
                clamp(raw.round(), self.low, self.high)
            }
        }
    }
}

fn clamp<S: Scalar>(v: S, low: S, high: S) -> S {
    if v < low {
        low
    } else if v > high {
        high
    } else {
        v
    }
}

/// An ordered collection of parameter specs; iteration order is the
/// declaration order and is stable across save/load.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchSpace<S> {
    params: Vec<ParamSpec<S>>,
}

impl<S: Scalar> SearchSpace<S> {
    pub fn new(params: Vec<ParamSpec<S>>) -> Self {
        Self { params }
    }

    pub fn dimension(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[ParamSpec<S>] {
        &self.params
    }

    pub fn spec(&self, name: &str) -> Option<&ParamSpec<S>> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Reports every violated invariant; `Ok` means the space is usable.
    pub fn validate(&self) -> Result<(), SpaceReport> {
        let mut violations = Vec::new();
        if self.params.is_empty() {
            violations.push(SpaceError::Empty);
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.params {
            violations.extend(p.violations());
            if !seen.insert(p.name.as_str()) {
                violations.push(SpaceError::DuplicateName {
                    name: p.name.clone(),
                });
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(SpaceReport { violations })
        }
    }

    /// Draws each coordinate independently from its prior.
    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamVector<S>, SpaceReport> {
        self.validate()?;
        let values = self
            .params
            .iter()
            .map(|p| (p.name.clone(), p.sample(rng)))
            .collect();
        Ok(ParamVector { values })
    }

    /// Maps a native-unit vector onto `[0,1]^d` in parameter order.
    pub fn to_unit(&self, v: &ParamVector<S>) -> Result<Vec<S>, SpaceError> {
        self.check(v)?;
        Ok(self
            .params
            .iter()
            .map(|p| p.to_unit(v.values[&p.name]))
            .collect())
    }

    /// Inverse of `to_unit`; int-uniform coordinates round to the nearest
    /// integer and clamp into bounds.
    pub fn from_unit(&self, u: &[S]) -> Result<ParamVector<S>, SpaceError> {
        if u.len() != self.params.len() {
            return Err(SpaceError::DimensionMismatch {
                expected: self.params.len(),
                got: u.len(),
            });
        }
        for (i, &c) in u.iter().enumerate() {
            if !(c >= S::zero() && c <= S::one()) {
                return Err(SpaceError::UnitOutOfRange {
                    index: i,
                    value: c.as_f64(),
                });
            }
        }
        let values = self
            .params
            .iter()
            .zip(u)
            .map(|(p, &c)| (p.name.clone(), p.from_unit(c)))
            .collect();
        Ok(ParamVector { values })
    }

    /// Checks that `v` carries exactly this space's names, in bounds.
    pub fn check(&self, v: &ParamVector<S>) -> Result<(), SpaceError> {
        for p in &self.params {
            match v.values.get(&p.name) {
                Some(&val) => p.check_value(val)?,
                None => {
                    return Err(SpaceError::MissingParam {
                        name: p.name.clone(),
                    })
                }
            }
        }
        if v.values.len() != self.params.len() {
            let unknown = v
                .values
                .keys()
                .find(|k| self.spec(k).is_none())
                .cloned()
                .unwrap_or_default();
            return Err(SpaceError::UnknownParam { name: unknown });
        }
        Ok(())
    }

    /// Builds a vector from (name, value) pairs, validating against the space.
    pub fn vector_from_pairs<I>(&self, pairs: I) -> Result<ParamVector<S>, SpaceError>
    where
        I: IntoIterator<Item = (String, S)>,
    {
        let v = ParamVector {
            values: pairs.into_iter().collect(),
        };
        self.check(&v)?;
        Ok(v)
    }
}

/// A hyperparameter configuration in native units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector<S> {
    values: BTreeMap<String, S>,
}

impl<S: Scalar> ParamVector<S> {
    pub fn get(&self, name: &str) -> Option<S> {
        self.values.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Name/value pairs in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, S)> {
        self.values.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Wire form: every value as `f64`, keyed by name.
    pub fn to_f64_map(&self) -> BTreeMap<String, f64> {
        self.values
            .iter()
            .map(|(k, v)| (k.clone(), v.as_f64()))
            .collect()
    }

    /// Rebuilds a vector from its wire form.
    pub fn from_f64_map(map: &BTreeMap<String, f64>) -> Self {
        Self {
            values: map.iter().map(|(k, &v)| (k.clone(), S::of(v))).collect(),
        }
    }
}
