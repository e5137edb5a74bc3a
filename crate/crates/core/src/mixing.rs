//! Input mixing (training on a union of subsampled sources), the effective
//! training distribution of the union, probit-trend slopes, and output
//! mixing (averaging model weights).

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::vector::{axpy, check_dim, cosine, norm};
use crate::numerics::RandomStream;
use crate::synthetic::{DistributionSpec, LabeledDataset, LinearModel, Provenance, TrainedModelSpec};

/// Source distributions with the number of samples drawn from each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    components: Vec<(DistributionSpec, u64)>,
}

impl MixtureSpec {
    pub fn new(components: Vec<(DistributionSpec, u64)>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::domain("mixture needs at least one component"))?;
        let d = first.0.dim();
        for (spec, _) in &components {
            check_dim(d, spec.dim())?;
        }
        let total = components
            .iter()
            .try_fold(0u64, |acc, (_, c)| acc.checked_add(*c))
            .ok_or_else(|| Error::domain("mixture count overflow"))?;
        if total == 0 {
            return Err(Error::domain("mixture total count must be >= 1"));
        }
        Ok(Self { components })
    }

    pub fn pair(a: DistributionSpec, n1: u64, b: DistributionSpec, n2: u64) -> Result<Self> {
        Self::new(vec![(a, n1), (b, n2)])
    }

    pub fn components(&self) -> &[(DistributionSpec, u64)] {
        &self.components
    }

    pub fn total(&self) -> u64 {
        self.components.iter().map(|(_, c)| c).sum()
    }

    pub fn dim(&self) -> usize {
        self.components[0].0.dim()
    }
}

/// How the effective SNR of a mixture is computed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoBarConvention {
    /// `|theta_bar| sqrt(N) / sqrt(sum n_i |theta_i|^2 / rho_i^2)`, which makes
    /// the random-model noise match the sample-mean estimator on the union.
    #[default]
    Canonical,
    /// `|theta_bar| / sqrt(sum n_i |theta_i|^2 / rho_i^2)`, without the
    /// `sqrt(N)` factor. Kept for comparison only.
    AsPrinted,
}

/// The single-distribution description of a trained-on-the-union model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveTrainSpec {
    pub theta_bar: Vec<f64>,
    pub rho_bar: f64,
    pub n_total: u64,
}

impl EffectiveTrainSpec {
    /// The random-model family this mixture induces with variation `xi`.
    pub fn trained_model_spec(&self, xi: f64) -> Result<TrainedModelSpec> {
        let train = DistributionSpec::gaussian(self.theta_bar.clone(), self.rho_bar)?;
        TrainedModelSpec::new(train, self.n_total, xi)
    }

    /// Per-coordinate noise std of the `xi = 1` model, `|theta_bar| / (rho_bar sqrt(N))`.
    pub fn model_noise_scale(&self) -> f64 {
        norm(&self.theta_bar) / (self.rho_bar * (self.n_total as f64).sqrt())
    }
}

pub fn effective_spec(mix: &MixtureSpec) -> Result<EffectiveTrainSpec> {
    effective_spec_with(mix, RhoBarConvention::Canonical)
}

pub fn effective_spec_with(
    mix: &MixtureSpec,
    convention: RhoBarConvention,
) -> Result<EffectiveTrainSpec> {
    let n_total = mix.total();
    let live: Vec<&(DistributionSpec, u64)> =
        mix.components.iter().filter(|(_, c)| *c > 0).collect();

    // A single live source is returned verbatim so endpoints stay bit-exact.
    let theta_bar = if let [only] = live.as_slice() {
        only.0.theta().to_vec()
    } else {
        let mut acc = vec![0.0; mix.dim()];
        for (spec, c) in &live {
            axpy(&mut acc, *c as f64, spec.theta());
        }
        let inv = 1.0 / n_total as f64;
        acc.iter_mut().for_each(|v| *v *= inv);
        acc
    };
    let bar_norm = norm(&theta_bar);
    if bar_norm == 0.0 {
        return Err(Error::Degenerate(
            "count-weighted mean direction cancels to zero".into(),
        ));
    }
    let noise_power: f64 = live
        .iter()
        .map(|(spec, c)| *c as f64 * spec.noise_scale().powi(2))
        .sum();
    let rho_bar = match convention {
        RhoBarConvention::Canonical => bar_norm * (n_total as f64).sqrt() / noise_power.sqrt(),
        RhoBarConvention::AsPrinted => bar_norm / noise_power.sqrt(),
    };
    Ok(EffectiveTrainSpec {
        theta_bar,
        rho_bar,
        n_total,
    })
}

/// Slope of the probit-space trend for models trained toward `train_theta`:
/// `cos(theta_2, theta) rho_2 / (cos(theta_1, theta) rho_1)`.
pub fn theoretical_slope(
    train_theta: &[f64],
    test1: &DistributionSpec,
    test2: &DistributionSpec,
) -> Result<f64> {
    check_dim(test1.dim(), train_theta.len())?;
    check_dim(test2.dim(), train_theta.len())?;
    let c1 = cosine(test1.theta(), train_theta)?;
    if c1.abs() < 1e-12 {
        return Err(Error::UndefinedSlope(
            "reference test direction is orthogonal to the training direction".into(),
        ));
    }
    let c2 = cosine(test2.theta(), train_theta)?;
    Ok(c2 * test2.rho() / (c1 * test1.rho()))
}

/// Uniform subsample without replacement of `n1p` samples from `d1` and
/// `n2p` from `d2`, concatenated in that order. Selected samples keep their
/// original relative order.
pub fn mix_datasets(
    d1: &LabeledDataset,
    d2: &LabeledDataset,
    n1p: usize,
    n2p: usize,
    stream: &mut RandomStream,
) -> Result<LabeledDataset> {
    mix_many(&[(d1, n1p), (d2, n2p)], stream)
}

/// [`mix_datasets`] for any number of sources.
pub fn mix_many(parts: &[(&LabeledDataset, usize)], stream: &mut RandomStream) -> Result<LabeledDataset> {
    let first = parts
        .first()
        .ok_or_else(|| Error::domain("mix requires at least one dataset"))?;
    let d = first.0.dim();
    let mut total = 0usize;
    for (ds, take) in parts {
        check_dim(d, ds.dim())?;
        if *take > ds.len() {
            return Err(Error::domain(format!(
                "requested {take} samples from a dataset of {}",
                ds.len()
            )));
        }
        total = total
            .checked_add(*take)
            .ok_or_else(|| Error::domain("mixture count overflow"))?;
    }
    if total == 0 {
        return Err(Error::domain("mixture must contain at least one sample"));
    }

    let mut samples = Vec::with_capacity(total);
    let mut provenance = Vec::with_capacity(parts.len());
    for (ds, take) in parts {
        let mut picked = index::sample(stream, ds.len(), *take).into_vec();
        picked.sort_unstable();
        samples.extend(picked.into_iter().map(|i| ds.samples()[i].clone()));
        let source = ds
            .provenance()
            .iter()
            .map(|p| p.source.as_str())
            .collect::<Vec<_>>()
            .join("+");
        provenance.push(Provenance {
            source,
            count: *take,
            stream: stream.id().to_owned(),
        });
    }
    LabeledDataset::new(d, samples, provenance)
}

/// Normalized weighted average of model weight vectors.
pub fn ensemble_models(models: &[LinearModel], weights: &[f64]) -> Result<LinearModel> {
    if models.is_empty() {
        return Err(Error::domain("cannot ensemble an empty model list"));
    }
    if models.len() != weights.len() {
        return Err(Error::domain(format!(
            "{} models but {} weights",
            models.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::domain("ensemble weights must be finite and non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::domain("ensemble weights sum to zero"));
    }
    let d = models[0].dim();
    let mut acc = vec![0.0; d];
    for (m, w) in models.iter().zip(weights) {
        check_dim(d, m.dim())?;
        if *w > 0.0 {
            axpy(&mut acc, *w / total, m.weights());
        }
    }
    LinearModel::new(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub alpha: f64,
    pub n1: u64,
    pub n2: u64,
    pub slope: std::result::Result<f64, String>,
}

/// Theoretical slope of the mixture trend for each `alpha`, with
/// `round(alpha * n_total)` samples from `spec1` and the rest from `spec2`.
///
/// A degenerate mixture at one `alpha` is recorded on that point and the
/// sweep continues.
pub fn mixture_slope_sweep(
    spec1: &DistributionSpec,
    spec2: &DistributionSpec,
    n_total: u64,
    alphas: &[f64],
    test1: &DistributionSpec,
    test2: &DistributionSpec,
) -> Result<Vec<SweepPoint>> {
    if n_total == 0 {
        return Err(Error::domain("n_total must be >= 1"));
    }
    if alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::domain("alphas must lie in [0, 1]"));
    }
    if alphas.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::domain("alphas must be sorted ascending"));
    }
    alphas
        .iter()
        .map(|&alpha| {
            let (n1, n2) = alpha_counts(alpha, n_total);
            let mix = MixtureSpec::pair(spec1.clone(), n1, spec2.clone(), n2)?;
            let slope = effective_spec(&mix)
                .and_then(|eff| theoretical_slope(&eff.theta_bar, test1, test2))
                .map_err(|e| e.to_string());
            Ok(SweepPoint {
                alpha,
                n1,
                n2,
                slope,
            })
        })
        .collect()
}

/// Splits `n_total` into `(round(alpha n), n - round(alpha n))`, rounding
/// half away from zero.
pub fn alpha_counts(alpha: f64, n_total: u64) -> (u64, u64) {
    let n1 = (alpha * n_total as f64).round() as u64;
    let n1 = n1.min(n_total);
    (n1, n_total - n1)
}

/// Outcome of checking a slope sweep against its endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationCheck {
    pub lower: f64,
    pub upper: f64,
    pub within_bounds: bool,
    pub monotone: bool,
    /// Largest distance outside `[lower, upper]`, zero when inside.
    pub max_excursion: f64,
}

/// Checks that every slope lies between the endpoint slopes and that the
/// discrete derivative never changes sign.
///
/// `tol` absorbs floating-point noise in the comparisons.
pub fn check_interpolation(slopes: &[f64], endpoint_a: f64, endpoint_b: f64, tol: f64) -> InterpolationCheck {
    let lower = endpoint_a.min(endpoint_b);
    let upper = endpoint_a.max(endpoint_b);
    let max_excursion = slopes
        .iter()
        .map(|s| (lower - s).max(s - upper).max(0.0))
        .fold(0.0, f64::max);
    let mut dir = 0.0f64;
    let mut monotone = true;
    for w in slopes.windows(2) {
        let step = w[1] - w[0];
        if step.abs() <= tol {
            continue;
        }
        if dir == 0.0 {
            dir = step.signum();
        } else if step.signum() != dir {
            monotone = false;
        }
    }
    InterpolationCheck {
        lower,
        upper,
        within_bounds: max_excursion <= tol,
        monotone,
        max_excursion,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::vector::{basis, planar_unit};
    use crate::numerics::SeedSpec;
    use crate::synthetic::{sample_dataset, train_linear, Label, Sample};

    fn g(theta: Vec<f64>, rho: f64) -> DistributionSpec {
        DistributionSpec::gaussian(theta, rho).unwrap()
    }

    fn toy(n: usize, tag: f64, source: &str) -> LabeledDataset {
        let samples = (0..n)
            .map(|i| Sample {
                x: vec![tag, i as f64],
                y: Label::Pos,
            })
            .collect();
        LabeledDataset::new(
            2,
            samples,
            vec![Provenance {
                source: source.into(),
                count: n,
                stream: "-".into(),
            }],
        )
        .unwrap()
    }

    #[test]
    fn degenerate_mixture_returns_first_dataset() {
        let d1 = toy(6, 1.0, "a");
        let d2 = toy(4, 2.0, "b");
        let mut s = SeedSpec::new(1).stream("mix", 0);
        let m = mix_datasets(&d1, &d2, 6, 0, &mut s).unwrap();
        assert_eq!(m.samples(), d1.samples());
    }

    #[test]
    fn mixture_bookkeeping() {
        let d1 = toy(6, 1.0, "a");
        let d2 = toy(7, 2.0, "b");
        let mut s = SeedSpec::new(1).stream("mix", 0);
        let m = mix_datasets(&d1, &d2, 3, 5, &mut s).unwrap();
        assert_eq!(m.len(), 8);
        let counts: Vec<_> = m.provenance().iter().map(|p| (p.source.as_str(), p.count)).collect();
        assert_eq!(counts, vec![("a", 3), ("b", 5)]);
        assert_eq!(m.samples().iter().filter(|s| s.x[0] == 1.0).count(), 3);
    }

    #[test]
    fn mixture_is_deterministic_per_stream() {
        let d1 = toy(50, 1.0, "a");
        let d2 = toy(50, 2.0, "b");
        let seed = SeedSpec::new(5);
        let a = mix_datasets(&d1, &d2, 10, 20, &mut seed.stream("mix", 3)).unwrap();
        let b = mix_datasets(&d1, &d2, 10, 20, &mut seed.stream("mix", 3)).unwrap();
        assert_eq!(a, b);
        let c = mix_datasets(&d1, &d2, 10, 20, &mut seed.stream("mix", 4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn mixture_rejects_bad_counts() {
        let d1 = toy(3, 1.0, "a");
        let d2 = toy(3, 2.0, "b");
        let mut s = SeedSpec::new(1).stream("mix", 0);
        assert!(mix_datasets(&d1, &d2, 4, 0, &mut s).is_err());
        assert!(mix_datasets(&d1, &d2, 0, 0, &mut s).is_err());
        let d3 = LabeledDataset::new(3, vec![], vec![]).unwrap();
        assert!(matches!(
            mix_datasets(&d1, &d3, 1, 0, &mut s),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn effective_spec_single_source_reduces() {
        let a = g(vec![3.0, 4.0], 2.0);
        let b = g(vec![0.0, 1.0], 1.0);
        let n1 = 25;
        let eff = effective_spec(&MixtureSpec::pair(a.clone(), n1, b, 0).unwrap()).unwrap();
        assert_eq!(eff.theta_bar, a.theta());
        // Noise std |theta| / (rho sqrt(n)) = 5 / (2 * 5).
        assert!((eff.model_noise_scale() - 0.5).abs() < 1e-15);
        assert!((eff.rho_bar - 2.0).abs() < 1e-14);
        let printed =
            effective_spec_with(&MixtureSpec::pair(a, n1, g(vec![0.0, 1.0], 1.0), 0).unwrap(), RhoBarConvention::AsPrinted)
                .unwrap();
        assert!((printed.rho_bar - 2.0 / 5.0).abs() < 1e-14);
    }

    #[test]
    fn effective_spec_equal_halves() {
        let eff = effective_spec(
            &MixtureSpec::pair(g(basis(3, 0), 1.0), 10, g(basis(3, 1), 1.0), 10).unwrap(),
        )
        .unwrap();
        assert_eq!(eff.theta_bar, vec![0.5, 0.5, 0.0]);
        assert_eq!(eff.n_total, 20);
    }

    #[test]
    fn effective_spec_cancellation_is_degenerate() {
        let r = effective_spec(
            &MixtureSpec::pair(g(vec![1.0, 0.0], 1.0), 5, g(vec![-1.0, 0.0], 1.0), 5).unwrap(),
        );
        assert!(matches!(r, Err(Error::Degenerate(_))));
    }

    #[test]
    fn mixture_spec_validation() {
        assert!(MixtureSpec::new(vec![]).is_err());
        assert!(MixtureSpec::pair(g(basis(2, 0), 1.0), 0, g(basis(2, 1), 1.0), 0).is_err());
        assert!(MixtureSpec::pair(g(basis(2, 0), 1.0), 1, g(basis(3, 1), 1.0), 1).is_err());
    }

    #[test]
    fn effective_noise_matches_trained_union() {
        // Monte Carlo moment oracle: spread of the sample-mean estimator on
        // mixed data against the effective-spec prediction.
        let d = 100;
        let a = g(basis(d, 0), 1.0);
        let b = g(vec![0.4; d], 2.0);
        let (n1, n2) = (30usize, 50usize);
        let eff = effective_spec(&MixtureSpec::pair(a.clone(), n1 as u64, b.clone(), n2 as u64).unwrap()).unwrap();
        let seed = SeedSpec::new(11);
        let trials = 10_000;
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        for t in 0..trials {
            let da = sample_dataset(&a, n1, &mut seed.stream("a", t)).unwrap();
            let db = sample_dataset(&b, n2, &mut seed.stream("b", t)).unwrap();
            let m = mix_datasets(&da, &db, n1, n2, &mut seed.stream("mix", t)).unwrap();
            let w = train_linear(&m).unwrap();
            for j in 0..d {
                let e = w.weights()[j] - eff.theta_bar[j];
                sum[j] += e;
                sq[j] += e * e;
            }
        }
        let n = trials as f64;
        let want = eff.model_noise_scale();
        let mut worst: f64 = 0.0;
        for j in 0..d {
            let var = (sq[j] - sum[j] * sum[j] / n) / (n - 1.0);
            worst = worst.max((var.sqrt() / want - 1.0).abs());
        }
        assert!(worst < 0.05, "worst relative std error {worst}");
    }

    #[test]
    fn slope_examples() {
        let d = 3;
        let t1 = g(basis(d, 0), 1.0);
        assert_eq!(theoretical_slope(&[1.0, 2.0, 3.0], &t1, &t1).unwrap(), 1.0);

        let train = basis(d, 0);
        let t2 = g(vec![0.8, 0.6, 0.0], 1.0);
        assert!((theoretical_slope(&train, &t1, &t2).unwrap() - 0.8).abs() < 1e-15);

        let t60 = g(planar_unit(d, 0, 1, 60.0).unwrap(), 1.0);
        assert!((theoretical_slope(&train, &t1, &t60).unwrap() - 0.5).abs() < 1e-15);

        let ortho = g(basis(d, 1), 1.0);
        assert!(matches!(
            theoretical_slope(&train, &ortho, &t1),
            Err(Error::UndefinedSlope(_))
        ));
    }

    #[test]
    fn slope_is_scale_invariant() {
        let t1 = g(vec![1.0, 0.2, -0.3], 1.2);
        let t2 = g(vec![0.1, 1.0, 0.5], 0.7);
        let th = [0.9, 0.4, 0.1];
        let base = theoretical_slope(&th, &t1, &t2).unwrap();
        for c in [0.5, 2.0, 1024.0] {
            let s: Vec<f64> = th.iter().map(|v| v * c).collect();
            assert_eq!(theoretical_slope(&s, &t1, &t2).unwrap(), base);
        }
    }

    #[test]
    fn sweep_endpoints_are_exact() {
        let d = 4;
        let s1 = g(basis(d, 0), 1.0);
        let s2 = g(planar_unit(d, 0, 1, 40.0).unwrap(), 1.5);
        let t1 = g(basis(d, 0), 1.0);
        let t2 = g(planar_unit(d, 0, 1, 70.0).unwrap(), 0.9);
        let pts = mixture_slope_sweep(&s1, &s2, 1000, &[0.0, 0.5, 1.0], &t1, &t2).unwrap();
        let slope1 = theoretical_slope(s1.theta(), &t1, &t2).unwrap();
        let slope2 = theoretical_slope(s2.theta(), &t1, &t2).unwrap();
        assert_eq!(pts[0].slope, Ok(slope2));
        assert_eq!(pts[2].slope, Ok(slope1));
        assert_eq!((pts[1].n1, pts[1].n2), (500, 500));
    }

    #[test]
    fn sweep_records_degenerate_points_and_continues() {
        let s1 = g(vec![1.0, 0.0], 1.0);
        let s2 = g(vec![-1.0, 0.0], 1.0);
        let t = g(vec![1.0, 0.0], 1.0);
        let pts = mixture_slope_sweep(&s1, &s2, 10, &[0.0, 0.5, 1.0], &t, &t).unwrap();
        assert!(pts[0].slope.is_ok());
        assert!(pts[1].slope.is_err());
        assert!(pts[2].slope.is_ok());
    }

    #[test]
    fn sweep_rejects_unsorted_alphas() {
        let s = g(basis(2, 0), 1.0);
        assert!(mixture_slope_sweep(&s, &s, 10, &[0.5, 0.1], &s, &s).is_err());
        assert!(mixture_slope_sweep(&s, &s, 10, &[1.5], &s, &s).is_err());
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(alpha_counts(0.5, 3), (2, 1));
        assert_eq!(alpha_counts(0.25, 2), (1, 1));
        assert_eq!(alpha_counts(1.0, 7), (7, 0));
        assert_eq!(alpha_counts(0.0, 7), (0, 7));
    }

    #[test]
    fn ensemble_examples() {
        let m = LinearModel::new(vec![1.0, -2.0, 0.5]).unwrap();
        let other = LinearModel::new(vec![4.0, 4.0, 4.0]).unwrap();
        assert_eq!(ensemble_models(&[m.clone(), m.clone()], &[0.5, 0.5]).unwrap(), m);
        assert_eq!(ensemble_models(&[m.clone(), other.clone()], &[1.0, 0.0]).unwrap(), m);
        assert!(ensemble_models(&[], &[]).is_err());
        assert!(ensemble_models(&[m.clone(), other.clone()], &[0.0, 0.0]).is_err());
        assert!(ensemble_models(&[m.clone()], &[-1.0]).is_err());
        let short = LinearModel::new(vec![1.0]).unwrap();
        assert!(ensemble_models(&[m, short], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn count_weighted_ensemble_equals_training_on_union() {
        let d = 20;
        let seed = SeedSpec::new(3);
        let a = g(basis(d, 0), 1.0);
        let b = g(vec![0.3; d], 0.5);
        let da = sample_dataset(&a, 17, &mut seed.stream("a", 0)).unwrap();
        let db = sample_dataset(&b, 40, &mut seed.stream("b", 0)).unwrap();
        let union = mix_datasets(&da, &db, 17, 40, &mut seed.stream("mix", 0)).unwrap();
        let joint = train_linear(&union).unwrap();
        let ens = ensemble_models(
            &[train_linear(&da).unwrap(), train_linear(&db).unwrap()],
            &[17.0, 40.0],
        )
        .unwrap();
        for (x, y) in joint.weights().iter().zip(ens.weights()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn interpolation_check_flags_violations() {
        let ok = check_interpolation(&[0.5, 0.6, 0.8, 1.0], 0.5, 1.0, 0.0);
        assert!(ok.within_bounds && ok.monotone);
        let bumpy = check_interpolation(&[0.5, 0.7, 0.6, 1.0], 0.5, 1.0, 0.0);
        assert!(bumpy.within_bounds && !bumpy.monotone);
        let out = check_interpolation(&[0.5, 1.2, 1.0], 0.5, 1.0, 0.0);
        assert!(!out.within_bounds);
        assert!((out.max_excursion - 0.2).abs() < 1e-12);
    }
}
