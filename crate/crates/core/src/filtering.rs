//! Data filtering guided by a pretrained linear model.
//!
//! Each training sample gets the score `<x y, w_pre>` and survives with
//! probability `h(score)` for a non-decreasing `h` with values in `[0, 1]`.
//! Training the sample-mean estimator on the survivors pulls the model toward
//! the pretrained direction while leaving the orthogonal complement alone
//! (Gaussian noise is rotation invariant).

use std::cmp::Ordering;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixing::theoretical_slope;
use crate::numerics::vector::{check_dim, dot, mean_and_stderr, mean_vector, norm};
use crate::numerics::{RandomStream, SeedSpec};
use crate::synthetic::{
    sample_dataset, train_linear, DistributionSpec, LabeledDataset, LinearModel, Provenance, Sample,
};

/// Maximum number of re-draws for a trial whose filter kept nothing.
pub const MAX_RETRIES: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FilterKind {
    /// `h(s) = 1{s >= tau}`
    HardThreshold { tau: f64 },
    /// `h(s) = 1 / (1 + exp(-beta (s - tau)))`
    Logistic { tau: f64, beta: f64 },
    /// Keep the `ceil(q n)` highest scores.
    TopQuantile { q: f64 },
}

impl FilterKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FilterKind::HardThreshold { tau } if tau.is_nan() => {
                Err(Error::domain("hard threshold tau is NaN"))
            }
            FilterKind::Logistic { tau, beta } => {
                if !tau.is_finite() {
                    return Err(Error::domain("logistic tau must be finite"));
                }
                if !(beta > 0.0 && beta.is_finite()) {
                    return Err(Error::domain(format!("logistic beta must be positive, got {beta}")));
                }
                Ok(())
            }
            FilterKind::TopQuantile { q } if !(q > 0.0 && q <= 1.0) => {
                Err(Error::domain(format!("top quantile q must lie in (0, 1], got {q}")))
            }
            _ => Ok(()),
        }
    }

    /// Acceptance probability for a score; `None` for the rank-based kind.
    pub fn acceptance(&self, s: f64) -> Option<f64> {
        match *self {
            FilterKind::HardThreshold { tau } => Some(if s >= tau { 1.0 } else { 0.0 }),
            FilterKind::Logistic { tau, beta } => {
                let t = beta * (s - tau);
                Some(if t >= 0.0 {
                    1.0 / (1.0 + (-t).exp())
                } else {
                    let e = t.exp();
                    e / (1.0 + e)
                })
            }
            FilterKind::TopQuantile { .. } => None,
        }
    }

    /// `true` for an `h` that is identically one.
    pub fn keeps_everything(&self) -> bool {
        matches!(*self, FilterKind::HardThreshold { tau } if tau == f64::NEG_INFINITY)
            || matches!(*self, FilterKind::TopQuantile { q } if q == 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub pretrained: LinearModel,
}

impl FilterSpec {
    pub fn new(kind: FilterKind, pretrained: LinearModel) -> Result<Self> {
        kind.validate()?;
        Ok(Self { kind, pretrained })
    }
}

/// `<x y, w_pre>`
pub fn score(sample: &Sample, pretrained: &LinearModel) -> Result<f64> {
    check_dim(pretrained.dim(), sample.x.len())?;
    Ok(sample.y.sign() * dot(&sample.x, pretrained.weights()))
}

/// Filters `dataset`. Survivors keep their original order; provenance counts
/// are recomputed per source. Probabilistic kinds may return an empty set.
pub fn apply_filter(
    dataset: &LabeledDataset,
    f: &FilterSpec,
    stream: &mut RandomStream,
) -> Result<LabeledDataset> {
    f.kind.validate()?;
    check_dim(dataset.dim(), f.pretrained.dim())?;
    if dataset.is_empty() {
        return Err(Error::domain("cannot filter an empty dataset"));
    }
    let scores: Vec<f64> = dataset
        .samples()
        .iter()
        .map(|s| s.y.sign() * dot(&s.x, f.pretrained.weights()))
        .collect();

    let keep: Vec<bool> = match f.kind {
        FilterKind::TopQuantile { q } => {
            let n = scores.len();
            let k = ((q * n as f64).ceil() as usize).clamp(1, n);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                scores[b]
                    .partial_cmp(&scores[a])
                    .unwrap_or(Ordering::Equal)
                    .then(a.cmp(&b))
            });
            let mut keep = vec![false; n];
            for &i in &order[..k] {
                keep[i] = true;
            }
            keep
        }
        kind => scores
            .iter()
            .map(|&s| {
                let h = kind.acceptance(s).unwrap_or(1.0);
                // One uniform per sample regardless of h keeps streams aligned.
                let u: f64 = stream.random();
                u < h
            })
            .collect(),
    };

    let mut samples = Vec::new();
    let mut provenance = Vec::new();
    let mut start = 0;
    for p in dataset.provenance() {
        let end = start + p.count;
        let mut kept = 0;
        for i in start..end {
            if keep[i] {
                samples.push(dataset.samples()[i].clone());
                kept += 1;
            }
        }
        provenance.push(Provenance {
            source: p.source.clone(),
            count: kept,
            stream: p.stream.clone(),
        });
        start = end;
    }
    LabeledDataset::new(dataset.dim(), samples, provenance)
}

/// Samples `n` points from `train`, filters them and fits the sample-mean
/// estimator on the survivors. The dataset is drawn first, so with a
/// keep-everything filter the result equals `train_linear` on the same stream.
pub fn filtered_model_trial(
    train: &DistributionSpec,
    n: usize,
    f: &FilterSpec,
    stream: &mut RandomStream,
) -> Result<LinearModel> {
    let ds = sample_dataset(train, n, stream)?;
    let kept = apply_filter(&ds, f, stream)?;
    if kept.is_empty() {
        return Err(Error::TrialRejected);
    }
    train_linear(&kept)
}

/// Runs `trials` independent filtered trials in parallel. A trial whose
/// filter keeps nothing is re-drawn on the next attempt stream, up to
/// [`MAX_RETRIES`] times. Returns the models in trial order and the total
/// number of rejected attempts.
pub fn filtered_models(
    train: &DistributionSpec,
    n: usize,
    f: &FilterSpec,
    seed: &SeedSpec,
    trials: u64,
) -> Result<(Vec<LinearModel>, u64)> {
    let results: Vec<Result<(LinearModel, u64)>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let trial_seed = seed.split("filter-trial", t);
            for attempt in 0..=MAX_RETRIES as u64 {
                let mut stream = trial_seed.stream("attempt", attempt);
                match filtered_model_trial(train, n, f, &mut stream) {
                    Ok(m) => return Ok((m, attempt)),
                    Err(Error::TrialRejected) => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::TrialRejected)
        })
        .collect();
    let mut models = Vec::with_capacity(results.len());
    let mut rejections = 0;
    for r in results {
        let (m, rej) = r?;
        models.push(m);
        rejections += rej;
    }
    Ok((models, rejections))
}

/// Directions and SNRs of a filtering experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterGeometry {
    pub theta_id: Vec<f64>,
    pub rho_id: f64,
    pub theta_ood: Vec<f64>,
    pub rho_ood: f64,
    pub theta_train: Vec<f64>,
    pub rho_train: f64,
    pub theta_pre: Vec<f64>,
}

impl FilterGeometry {
    fn tests(&self) -> Result<(DistributionSpec, DistributionSpec)> {
        Ok((
            DistributionSpec::gaussian(self.theta_id.clone(), self.rho_id)?,
            DistributionSpec::gaussian(self.theta_ood.clone(), self.rho_ood)?,
        ))
    }

    pub fn slope_of(&self, theta: &[f64]) -> Result<f64> {
        let (id, ood) = self.tests()?;
        theoretical_slope(theta, &id, &ood)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeTriple {
    pub unfiltered: f64,
    pub filtered: f64,
    pub pretrained: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterExperiment {
    pub slopes: SlopeTriple,
    /// Delta-method standard error of the filtered slope.
    pub filtered_slope_se: f64,
    /// Mean shift of the filtered model along the unit pretrained direction.
    pub parallel_shift: f64,
    pub parallel_shift_se: f64,
    /// Norm of the mean filtered model's deviation from `theta_train` in the
    /// orthogonal complement of the pretrained direction.
    pub orthogonal_deviation: f64,
    pub trials: u64,
    pub rejections: u64,
}

/// Estimates `E[filtered model]` over `trials` runs and reports the slopes of
/// the unfiltered, mean-filtered and pretrained directions.
///
/// The filtered slope is the slope of the mean model, not the mean of
/// per-trial slopes.
pub fn slope_ordering_experiment(
    geometry: &FilterGeometry,
    n: usize,
    trials: u64,
    kind: FilterKind,
    seed: &SeedSpec,
) -> Result<FilterExperiment> {
    let unfiltered = geometry.slope_of(&geometry.theta_train)?;
    let pretrained = geometry.slope_of(&geometry.theta_pre)?;
    if !(unfiltered < pretrained) {
        return Err(Error::Config(vec![format!(
            "filter geometry violates Slope(theta_train) < Slope(theta_pre): {unfiltered} >= {pretrained}"
        )]));
    }
    if pretrained > 1.0 {
        return Err(Error::Config(vec![format!(
            "filter geometry violates Slope(theta_pre) <= 1: {pretrained}"
        )]));
    }
    if trials < 2 {
        return Err(Error::Config(vec!["filter experiment needs at least 2 trials".into()]));
    }

    let train = DistributionSpec::gaussian(geometry.theta_train.clone(), geometry.rho_train)?;
    let f = FilterSpec::new(kind, LinearModel::new(geometry.theta_pre.clone())?)?;
    let (models, rejections) = filtered_models(&train, n, &f, seed, trials)?;
    let weights: Vec<Vec<f64>> = models.iter().map(|m| m.weights().to_vec()).collect();
    let mean = mean_vector(&weights)?;
    let filtered = geometry.slope_of(&mean)?;

    // Slope(theta) = (rho_ood <u_ood, theta>) / (rho_id <u_id, theta>) for unit
    // test directions; linearize around the mean.
    let u_id = unit(&geometry.theta_id);
    let u_ood = unit(&geometry.theta_ood);
    let a = dot(&u_id, &mean);
    let b = dot(&u_ood, &mean);
    let k = geometry.rho_ood / geometry.rho_id;
    let grad: Vec<f64> = u_ood
        .iter()
        .zip(&u_id)
        .map(|(o, i)| k * (o * a - i * b) / (a * a))
        .collect();
    let lin: Vec<f64> = weights.iter().map(|w| dot(&grad, w)).collect();
    let (_, filtered_slope_se) = mean_and_stderr(&lin);

    let u_pre = unit(&geometry.theta_pre);
    let shifts: Vec<f64> = weights
        .iter()
        .map(|w| dot(&u_pre, w) - dot(&u_pre, &geometry.theta_train))
        .collect();
    let (parallel_shift, parallel_shift_se) = mean_and_stderr(&shifts);
    let mut resid: Vec<f64> = mean.iter().zip(&geometry.theta_train).map(|(m, t)| m - t).collect();
    let along = dot(&resid, &u_pre);
    resid.iter_mut().zip(&u_pre).for_each(|(r, u)| *r -= along * u);

    Ok(FilterExperiment {
        slopes: SlopeTriple {
            unfiltered,
            filtered,
            pretrained,
        },
        filtered_slope_se,
        parallel_shift,
        parallel_shift_se,
        orthogonal_deviation: norm(&resid),
        trials,
        rejections,
    })
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    v.iter().map(|x| x / n).collect()
}
