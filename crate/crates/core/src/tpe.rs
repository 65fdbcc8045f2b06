//! Tree-structured Parzen Estimator surrogate.
//!
//! Observations are split at the γ-quantile threshold Φ*; the "good" density
//! `l` is fit over the top observations and the "bad" density `g` over the
//! rest, both as per-dimension truncated-Gaussian mixtures on the unit cube
//! with a uniform prior component. The next configuration is the candidate
//! drawn from `l` that maximizes `log l(x) − log g(x)`, the log of the ratio
//! that Expected Improvement is proportional to.
//!
//! The objective convention is higher-is-better throughout; minimization
//! problems negate on ingestion.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::space::{ParamVector, SearchSpace, SpaceError, SpaceReport};

/// An evaluated configuration: the pair (λ, Φ(λ)).
///
/// Failed trials carry the `-inf` sentinel objective; every successful
/// observation has a finite objective.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Observation<S> {
    pub params: ParamVector<S>,
    pub objective: S,
    pub trial_id: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TpeError {
    #[error("observation set is empty")]
    EmptyObservations,
    #[error("gamma must lie in (0, 1), got {0}")]
    InvalidGamma(f64),
    #[error("duplicate trial id {0} in observation set")]
    DuplicateTrialId(u64),
    #[error("objective for trial {trial_id} must be finite or -inf, got {value}")]
    BadObjective { trial_id: u64, value: f64 },
    #[error("density dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("point {value} at dimension {index} outside the unit cube")]
    OutOfCube { index: usize, value: f64 },
    #[error("invalid TPE config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    SpaceReport(#[from] SpaceReport),
}

/// Insertion-ordered collection of observations (Λ or Λ′).
///
/// The label identifies which set a suggestion read, so phase separation is
/// auditable from the trial log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObservationSet<S> {
    label: String,
    observations: Vec<Observation<S>>,
}

impl<S: Scalar> ObservationSet<S> {
    pub fn new(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            observations: Vec::new(),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Observation<S>> {
        self.observations.iter()
    }

    pub fn push(&mut self, obs: Observation<S>) -> Result<(), TpeError> {
        let finite_or_sentinel =
            obs.objective.is_finite() || obs.objective == S::neg_infinity();
        if !finite_or_sentinel {
            return Err(TpeError::BadObjective {
                trial_id: obs.trial_id,
                value: obs.objective.as_f64(),
            });
        }
        if self.observations.iter().any(|o| o.trial_id == obs.trial_id) {
            return Err(TpeError::DuplicateTrialId(obs.trial_id));
        }
        self.observations.push(obs);
        Ok(())
    }

    /// The observation with maximal objective; ties break toward the
    /// earliest trial id.
    pub fn best_observed(&self) -> Result<&Observation<S>, TpeError> {
        let mut best: Option<&Observation<S>> = None;
        for o in &self.observations {
            best = match best {
                None => Some(o),
                Some(b) => {
                    if o.objective > b.objective
                        || (o.objective == b.objective && o.trial_id < b.trial_id)
                    {
                        Some(o)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        best.ok_or(TpeError::EmptyObservations)
    }

    /// Splits into good/bad at the γ-quantile; the good side holds the top
    /// `max(1, ceil(γ·n))` observations with ties broken toward recency
    /// (newer counts as good), mapped into unit coordinates.
    pub fn split_observations(
        &self,
        space: &SearchSpace<S>,
        gamma: S,
    ) -> Result<ParzenSplit<S>, TpeError> {
        let n = self.observations.len();
        if n == 0 {
            return Err(TpeError::EmptyObservations);
        }
        let g = gamma.as_f64();
        if !(g > 0.0 && g < 1.0) {
            return Err(TpeError::InvalidGamma(g));
        }
        let n_good = ((g * n as f64).ceil() as usize).max(1).min(n);

        let mut order: Vec<usize> = (0..n).collect();
        // Objective descending, then insertion index descending (recency).
        order.sort_by(|&a, &b| {
            let (oa, ob) = (self.observations[a].objective, self.observations[b].objective);
            ob.partial_cmp(&oa)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(b.cmp(&a))
        });

        let phi_star = self.observations[order[n_good - 1]].objective;
        let mut good = Vec::with_capacity(n_good);
        let mut bad = Vec::with_capacity(n - n_good);
        for (rank, &idx) in order.iter().enumerate() {
            let unit = space.to_unit(&self.observations[idx].params)?;
            if rank < n_good {
                good.push(unit);
            } else {
                bad.push(unit);
            }
        }
        Ok(ParzenSplit {
            gamma,
            phi_star,
            good,
            bad,
        })
    }
}

/// The γ-split of an observation set in unit coordinates.
#[derive(Clone, Debug)]
pub struct ParzenSplit<S> {
    pub gamma: S,
    pub phi_star: S,
    pub good: Vec<Vec<S>>,
    pub bad: Vec<Vec<S>>,
}

/// TPE knobs. γ comes from the quantile split rule; the rest are estimator
/// internals surfaced in config so studies log the values they ran with.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TpeConfig<S> {
    pub gamma: S,
    pub n_ei_candidates: usize,
    pub n_startup: usize,
    pub bandwidth_floor: S,
    pub prior_weight: S,
}

impl<S: Scalar> Default for TpeConfig<S> {
    fn default() -> Self {
        Self {
            gamma: S::of(0.25),
            n_ei_candidates: 24,
            n_startup: 10,
            bandwidth_floor: S::of(1e-3),
            prior_weight: S::one(),
        }
    }
}

impl<S: Scalar> TpeConfig<S> {
    pub fn validate(&self) -> Result<(), TpeError> {
        let g = self.gamma.as_f64();
        if !(g > 0.0 && g < 1.0) {
            return Err(TpeError::InvalidGamma(g));
        }
        if self.n_ei_candidates < 1 {
            return Err(TpeError::InvalidConfig("n_ei_candidates must be >= 1".into()));
        }
        if self.n_startup < 1 {
            return Err(TpeError::InvalidConfig("n_startup must be >= 1".into()));
        }
        let floor = self.bandwidth_floor.as_f64();
        if !(floor > 0.0 && floor <= 1.0) {
            return Err(TpeError::InvalidConfig(
                "bandwidth_floor must lie in (0, 1]".into(),
            ));
        }
        if !(self.prior_weight.as_f64() > 0.0) {
            return Err(TpeError::InvalidConfig("prior_weight must be > 0".into()));
        }
        Ok(())
    }
}

/// Per-dimension mixture: one truncated Gaussian per point plus a uniform
/// prior component, all renormalized to [0, 1].
#[derive(Clone, Debug, Serialize, Deserialize)]
struct DimMixture<S> {
    centers: Vec<S>,
    bandwidths: Vec<S>,
    weights: Vec<S>,
    uniform_weight: S,
}

impl<S: Scalar> DimMixture<S> {
    fn pdf(&self, x: S) -> S {
        // Uniform on [0,1] has density 1.
        let mut acc = self.uniform_weight;
        for ((&c, &bw), &w) in self.centers.iter().zip(&self.bandwidths).zip(&self.weights) {
            acc = acc + w * truncated_normal_pdf(x, c, bw);
        }
        acc
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> S {
        let r = S::of(rng.gen::<f64>());
        if r < self.uniform_weight || self.centers.is_empty() {
            return S::of(rng.gen::<f64>());
        }
        let mut cum = self.uniform_weight;
        let mut pick = self.centers.len() - 1;
        for (k, &w) in self.weights.iter().enumerate() {
            cum = cum + w;
            if r < cum {
                pick = k;
                break;
            }
        }
        sample_truncated_normal(self.centers[pick], self.bandwidths[pick], rng)
    }
}

/// Gaussian pdf truncated and renormalized to [0, 1].
fn truncated_normal_pdf<S: Scalar>(x: S, center: S, bandwidth: S) -> S {
    let half = S::of(0.5);
    let sqrt2 = S::of(std::f64::consts::SQRT_2);
    let z = (x - center) / bandwidth;
    let norm = S::of((2.0 * std::f64::consts::PI).sqrt());
    let raw = (-half * z * z).exp() / (bandwidth * norm);
    // Mass of the untruncated Gaussian inside [0, 1].
    let upper = ((S::one() - center) / (bandwidth * sqrt2)).erf();
    let lower = ((S::zero() - center) / (bandwidth * sqrt2)).erf();
    let mass = half * (upper - lower);
    raw / mass
}

fn sample_truncated_normal<S: Scalar, R: Rng + ?Sized>(center: S, bandwidth: S, rng: &mut R) -> S {
    // Rejection sampling; with centers inside [0,1] the acceptance rate is
    // bounded well away from zero.
    for _ in 0..10_000 {
        let z: f64 = rng.sample(StandardNormal);
        let x = center + bandwidth * S::of(z);
        if x >= S::zero() && x <= S::one() {
            return x;
        }
    }
    // Unreachable in practice; keep the draw inside the cube.
    let z: f64 = rng.sample(StandardNormal);
    let x = center + bandwidth * S::of(z);
    x.max(S::zero()).min(S::one())
}

/// A fitted density (`l` or `g`): independent per-dimension mixtures.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParzenDensity<S> {
    dims: Vec<DimMixture<S>>,
}

impl<S: Scalar> ParzenDensity<S> {
    pub fn dimension(&self) -> usize {
        self.dims.len()
    }

    /// Sum over dimensions of the log mixture density; finite everywhere on
    /// the closed cube because of the uniform prior component.
    pub fn log_density(&self, x: &[S]) -> Result<S, TpeError> {
        if x.len() != self.dims.len() {
            return Err(TpeError::DimensionMismatch {
                expected: self.dims.len(),
                got: x.len(),
            });
        }
        let mut total = S::zero();
        for (i, (&xi, dim)) in x.iter().zip(&self.dims).enumerate() {
            if !(xi >= S::zero() && xi <= S::one()) {
                return Err(TpeError::OutOfCube {
                    index: i,
                    value: xi.as_f64(),
                });
            }
            total = total + dim.pdf(xi).ln();
        }
        Ok(total)
    }

    /// Draws one point, sampling each dimension's mixture independently.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<S> {
        self.dims.iter().map(|d| d.sample(rng)).collect()
    }

    /// Per-dimension density at `x`, exposed for quadrature checks.
    pub fn dim_pdf(&self, dim: usize, x: S) -> S {
        self.dims[dim].pdf(x)
    }
}

/// Fits the per-dimension mixture over unit-space points.
///
/// Bandwidth follows a Scott-style rule, `clamp(std · n^(-1/5),
/// bandwidth_floor, 1)` with the sample standard deviation floored at 0.1.
/// The uniform component carries weight `prior_weight / (n + prior_weight)`;
/// the remainder splits equally among the point components. With zero points
/// the density is the pure uniform prior.
pub fn build_density<S: Scalar>(
    dimension: usize,
    points: &[Vec<S>],
    config: &TpeConfig<S>,
) -> Result<ParzenDensity<S>, TpeError> {
    config.validate()?;
    for p in points {
        if p.len() != dimension {
            return Err(TpeError::DimensionMismatch {
                expected: dimension,
                got: p.len(),
            });
        }
        for (i, &c) in p.iter().enumerate() {
            if !(c >= S::zero() && c <= S::one()) {
                return Err(TpeError::OutOfCube {
                    index: i,
                    value: c.as_f64(),
                });
            }
        }
    }
    let n = points.len();
    let mut dims = Vec::with_capacity(dimension);
    for j in 0..dimension {
        if n == 0 {
            dims.push(DimMixture {
                centers: Vec::new(),
                bandwidths: Vec::new(),
                weights: Vec::new(),
                uniform_weight: S::one(),
            });
            continue;
        }
        let xs: Vec<S> = points.iter().map(|p| p[j]).collect();
        let nf = S::of_usize(n);
        let mean = xs.iter().fold(S::zero(), |a, &x| a + x) / nf;
        let std = if n >= 2 {
            let ss = xs
                .iter()
                .fold(S::zero(), |a, &x| a + (x - mean) * (x - mean));
            (ss / S::of_usize(n - 1)).sqrt()
        } else {
            S::zero()
        };
        let floored_std = std.max(S::of(0.1));
        let scott = floored_std * nf.powf(S::of(-0.2));
        let bandwidth = scott.max(config.bandwidth_floor).min(S::one());

        let uniform_weight = config.prior_weight / (nf + config.prior_weight);
        let point_weight = (S::one() - uniform_weight) / nf;
        dims.push(DimMixture {
            centers: xs,
            bandwidths: vec![bandwidth; n],
            weights: vec![point_weight; n],
            uniform_weight,
        });
    }
    Ok(ParzenDensity { dims })
}

/// `log l(x) − log g(x)`: the acquisition score maximized by `suggest`.
pub fn acquisition_score<S: Scalar>(
    l: &ParzenDensity<S>,
    g: &ParzenDensity<S>,
    x: &[S],
) -> Result<S, TpeError> {
    if l.dimension() != g.dimension() {
        return Err(TpeError::DimensionMismatch {
            expected: l.dimension(),
            got: g.dimension(),
        });
    }
    Ok(l.log_density(x)? - g.log_density(x)?)
}

/// A scored candidate draw, kept for the trial log so the argmax can be
/// re-checked offline.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Candidate<S> {
    pub unit: Vec<S>,
    pub score: S,
}

/// How a suggestion was produced: either a startup prior draw or a TPE
/// ratio maximization with its full candidate trace.
#[derive(Clone, Debug)]
pub struct Suggestion<S> {
    pub params: ParamVector<S>,
    pub trace: Option<SuggestTrace<S>>,
}

#[derive(Clone, Debug)]
pub struct SuggestTrace<S> {
    pub candidates: Vec<Candidate<S>>,
    pub chosen: usize,
    pub phi_star: S,
}

/// Suggests the next configuration.
///
/// Below `n_startup` observations this falls back to the prior. Otherwise it
/// splits at γ, fits `l` over the good side and `g` over the bad side, draws
/// `n_ei_candidates` samples from `l`, and returns the candidate with the
/// highest acquisition score. Deterministic given the rng state.
pub fn suggest<S: Scalar, R: Rng + ?Sized>(
    obs: &ObservationSet<S>,
    space: &SearchSpace<S>,
    config: &TpeConfig<S>,
    rng: &mut R,
) -> Result<Suggestion<S>, TpeError> {
    space.validate()?;
    config.validate()?;
    if obs.len() < config.n_startup {
        return Ok(Suggestion {
            params: space.sample_prior(rng)?,
            trace: None,
        });
    }

    let split = obs.split_observations(space, config.gamma)?;
    let dim = space.dimension();
    let l = build_density(dim, &split.good, config)?;
    let g = build_density(dim, &split.bad, config)?;

    let mut candidates = Vec::with_capacity(config.n_ei_candidates);
    for _ in 0..config.n_ei_candidates {
        let unit = l.sample(rng);
        let score = acquisition_score(&l, &g, &unit)?;
        candidates.push(Candidate { unit, score });
    }
    // First maximum wins on ties.
    let chosen = argmax(&candidates);
    let params = space.from_unit(&candidates[chosen].unit)?;
    Ok(Suggestion {
        params,
        trace: Some(SuggestTrace {
            candidates,
            chosen,
            phi_star: split.phi_star,
        }),
    })
}

fn argmax<S: Scalar>(candidates: &[Candidate<S>]) -> usize {
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate().skip(1) {
        if c.score > candidates[best].score {
            best = i;
        }
    }
    best
}
