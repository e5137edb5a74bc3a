//! Probit-space scatter points, linear trend fits, effective robustness and
//! residual diagnostics.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixing::theoretical_slope;
use crate::numerics::vector::{basis, mean_and_stderr, planar_unit};
use crate::numerics::{clamp_accuracy, phi, probit, Probability, SeedSpec};
use crate::synthetic::{
    closed_form_accuracy, conditional_accuracy, mc_accuracy_batch, sample_trained_model,
    DistributionSpec, LinearModel, TrainedModelSpec,
};

/// One model evaluated on a reference and a shifted distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRecord {
    pub model_id: String,
    pub ref_dataset: String,
    pub ref_accuracy: Probability,
    pub shift_name: String,
    pub shift_accuracy: Probability,
    pub m_ref: u64,
    pub m_shift: u64,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbitPoint {
    pub u: f64,
    pub v: f64,
    /// Either accuracy was pulled in from 0 or 1.
    pub clamped: bool,
}

impl AccuracyRecord {
    pub fn validate(&self) -> Result<()> {
        if self.m_ref == 0 || self.m_shift == 0 {
            return Err(Error::domain(format!(
                "record {}: eval counts must be positive",
                self.model_id
            )));
        }
        Ok(())
    }
}

/// Maps a record to `(probit(ref), probit(shift))` after clamping each
/// accuracy with its eval count.
pub fn to_probit_point(rec: &AccuracyRecord) -> Result<ProbitPoint> {
    rec.validate()?;
    let a = clamp_accuracy(rec.ref_accuracy.value(), rec.m_ref)?;
    let b = clamp_accuracy(rec.shift_accuracy.value(), rec.m_shift)?;
    Ok(ProbitPoint {
        u: probit(a)?,
        v: probit(b)?,
        clamped: a != rec.ref_accuracy.value() || b != rec.shift_accuracy.value(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    Free,
    #[default]
    ThroughOrigin,
}

impl fmt::Display for FitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FitMode::Free => "free",
            FitMode::ThroughOrigin => "through_origin",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendFit {
    pub slope: f64,
    pub intercept: f64,
    pub mode: FitMode,
    pub n_points: usize,
    pub rms_residual: f64,
    /// Centered coefficient of determination; `1` for a perfect fit and `0`
    /// when the responses are constant but not fitted exactly.
    pub r_squared: f64,
    /// Points whose accuracies were clamped before the probit transform.
    pub n_clamped: usize,
}

impl TrendFit {
    pub fn predict(&self, u: f64) -> f64 {
        self.slope * u + self.intercept
    }
}

/// Ordinary least squares of `v` on `u`.
///
/// Points are sorted before accumulation, so the result does not depend on
/// their order.
pub fn fit_trend(points: &[(f64, f64)], mode: FitMode) -> Result<TrendFit> {
    if points.iter().any(|(u, v)| !u.is_finite() || !v.is_finite()) {
        return Err(Error::Fit("non-finite point".into()));
    }
    let need = match mode {
        FitMode::Free => 2,
        FitMode::ThroughOrigin => 1,
    };
    if points.len() < need {
        return Err(Error::Fit(format!(
            "{mode} fit needs at least {need} points, got {}",
            points.len()
        )));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n = pts.len() as f64;
    let u_mean = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let v_mean = pts.iter().map(|p| p.1).sum::<f64>() / n;

    let (slope, intercept) = match mode {
        FitMode::Free => {
            let sxx: f64 = pts.iter().map(|p| (p.0 - u_mean).powi(2)).sum();
            if sxx == 0.0 {
                return Err(Error::Fit("all u values are identical".into()));
            }
            let sxy: f64 = pts.iter().map(|p| (p.0 - u_mean) * (p.1 - v_mean)).sum();
            let slope = sxy / sxx;
            (slope, v_mean - slope * u_mean)
        }
        FitMode::ThroughOrigin => {
            let suu: f64 = pts.iter().map(|p| p.0 * p.0).sum();
            if suu == 0.0 {
                return Err(Error::Fit("all u values are zero".into()));
            }
            let suv: f64 = pts.iter().map(|p| p.0 * p.1).sum();
            (suv / suu, 0.0)
        }
    };

    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - slope * p.0 - intercept).powi(2))
        .sum();
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - v_mean).powi(2)).sum();
    let r_squared = if ss_res == 0.0 {
        1.0
    } else if ss_tot == 0.0 {
        0.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(TrendFit {
        slope,
        intercept,
        mode,
        n_points: pts.len(),
        rms_residual: (ss_res / n).sqrt(),
        r_squared,
        n_clamped: 0,
    })
}

/// Fits the probit points of `records`, optionally dropping clamped ones.
pub fn fit_records(records: &[AccuracyRecord], mode: FitMode, exclude_clamped: bool) -> Result<TrendFit> {
    let mut pts = Vec::with_capacity(records.len());
    let mut n_clamped = 0;
    for r in records {
        let p = to_probit_point(r)?;
        if p.clamped {
            n_clamped += 1;
            if exclude_clamped {
                continue;
            }
        }
        pts.push((p.u, p.v));
    }
    let mut fit = fit_trend(&pts, mode)?;
    fit.n_clamped = n_clamped;
    Ok(fit)
}

/// Space in which displacement from the baseline is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RobustnessSpace {
    #[default]
    Probit,
    /// `shift_accuracy - phi(baseline(u))`, for comparison with tools that
    /// report accuracy-point differences.
    Accuracy,
}

/// Vertical displacement of `rec` above `baseline` in probit space.
pub fn effective_robustness(rec: &AccuracyRecord, baseline: &TrendFit) -> Result<f64> {
    effective_robustness_in(rec, baseline, RobustnessSpace::Probit)
}

pub fn effective_robustness_in(
    rec: &AccuracyRecord,
    baseline: &TrendFit,
    space: RobustnessSpace,
) -> Result<f64> {
    let p = to_probit_point(rec)?;
    let predicted = baseline.predict(p.u);
    Ok(match space {
        RobustnessSpace::Probit => p.v - predicted,
        RobustnessSpace::Accuracy => rec.shift_accuracy.value() - phi(predicted)?,
    })
}

/// How the two accuracies of each trial model are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AccuracySource {
    /// Exact accuracy of the drawn model under Gaussian test noise.
    #[default]
    Exact,
    /// Monte Carlo estimate from `m` shared test draws per distribution.
    MonteCarlo { m: u64 },
    /// Closed-form family accuracy; every point lies on the line, so the
    /// residuals are zero. Diagnostic only.
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualScalingConfig {
    /// Ascending dimensions.
    pub dims: Vec<usize>,
    pub n_over_d: f64,
    pub xi: f64,
    pub rho: f64,
    /// Angle in degrees between the two test directions; training is aligned
    /// with the reference test direction.
    pub shift_angle_deg: f64,
    pub trials: u64,
    pub source: AccuracySource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub d: usize,
    pub n: u64,
    pub mean_abs_residual: f64,
    pub stderr: f64,
}

/// Mean `|probit(acc2) - slope * probit(acc1)|` over `trials` random models
/// per dimension, with `slope` the theoretical one.
pub fn residual_scaling_report(cfg: &ResidualScalingConfig, seed: &SeedSpec) -> Result<Vec<ResidualRow>> {
    if cfg.dims.is_empty() {
        return Err(Error::Config(vec!["dims must be non-empty".into()]));
    }
    if cfg.dims.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(vec!["dims must be strictly ascending".into()]));
    }
    if cfg.dims[0] < 2 {
        return Err(Error::Config(vec!["dims must be at least 2".into()]));
    }
    if cfg.trials == 0 {
        return Err(Error::Config(vec!["trials must be positive".into()]));
    }
    if !(cfg.n_over_d > 0.0) {
        return Err(Error::Config(vec!["n_over_d must be positive".into()]));
    }
    cfg.dims
        .par_iter()
        .map(|&d| residual_row(cfg, d, &seed.split("residual-d", d as u64)))
        .collect()
}

fn residual_row(cfg: &ResidualScalingConfig, d: usize, seed: &SeedSpec) -> Result<ResidualRow> {
    let n = ((cfg.n_over_d * d as f64).round() as u64).max(1);
    let theta = basis(d, 0);
    let test1 = DistributionSpec::gaussian(theta.clone(), cfg.rho)?;
    let test2 = DistributionSpec::gaussian(planar_unit(d, 0, 1, cfg.shift_angle_deg)?, cfg.rho)?;
    let family = TrainedModelSpec::new(DistributionSpec::gaussian(theta.clone(), cfg.rho)?, n, cfg.xi)?;
    let slope = theoretical_slope(&theta, &test1, &test2)?;

    let models: Vec<LinearModel> = (0..cfg.trials)
        .map(|t| sample_trained_model(&family, &mut seed.stream("model", t)))
        .collect();
    let pairs: Vec<(f64, f64)> = match cfg.source {
        AccuracySource::Exact => models
            .iter()
            .map(|w| Ok((conditional_accuracy(w, &test1)?.value(), conditional_accuracy(w, &test2)?.value())))
            .collect::<Result<_>>()?,
        AccuracySource::MonteCarlo { m } => {
            let a = mc_accuracy_batch(&models, &test1, m, &mut seed.stream("test1", 0))?;
            let b = mc_accuracy_batch(&models, &test2, m, &mut seed.stream("test2", 0))?;
            a.iter()
                .zip(&b)
                .map(|(x, y)| Ok((clamp_accuracy(x.accuracy, m)?, clamp_accuracy(y.accuracy, m)?)))
                .collect::<Result<_>>()?
        }
        AccuracySource::ClosedForm => {
            let p = (
                closed_form_accuracy(&family, &test1)?.value(),
                closed_form_accuracy(&family, &test2)?.value(),
            );
            vec![p; models.len()]
        }
    };
    let residuals: Vec<f64> = pairs
        .iter()
        .map(|&(a, b)| Ok((probit(b)? - slope * probit(a)?).abs()))
        .collect::<Result<_>>()?;
    let (mean, se) = mean_and_stderr(&residuals);
    Ok(ResidualRow {
        d,
        n,
        mean_abs_residual: mean,
        stderr: se,
    })
}
