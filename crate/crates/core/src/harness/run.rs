//! Experiment execution for each config kind.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filtering::{slope_ordering_experiment, FilterExperiment, FilterGeometry, FilterKind};
use crate::harness::config::{ExperimentConfig, ExperimentKind, LineAccuracy};
use crate::harness::ingest::ingest_accuracies;
use crate::harness::report::{NamedFit, RunReport, TableRef, TheoremCheck};
use crate::harness::table::{emit_csv, fmt_g9, Cell, Table};
use crate::mixing::{
    alpha_counts, check_interpolation, effective_spec, ensemble_models, mix_many, mixture_slope_sweep,
    theoretical_slope, MixtureSpec,
};
use crate::numerics::vector::mean_and_stderr;
use crate::numerics::{clamp_accuracy, probit, SeedSpec};
use crate::synthetic::{
    closed_form_accuracy, conditional_accuracy, mc_accuracy_batch, sample_dataset, sample_trained_model,
    signal_adjusted_accuracy, train_linear, DistributionSpec, LinearModel, NoiseFamily, TrainedModelSpec,
};
use crate::trend::{
    effective_robustness, fit_records, fit_trend, residual_scaling_report, to_probit_point, FitMode,
    ResidualScalingConfig,
};

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "ROBUSTLINE_OUT_DIR";

/// Clamp count for exact accuracies, which carry no sampling error.
const EXACT_M: u64 = 1_000_000_000_000_000;

/// A finished run before anything is written.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub tables: Vec<(String, Table)>,
}

impl RunOutput {
    fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            report: RunReport::new(cfg.clone()),
            tables: Vec::new(),
        }
    }

    fn add_table(&mut self, file: &str, table: Table) {
        self.report.results.push(TableRef {
            file: file.to_owned(),
            header: table.header.clone(),
            rows: table.len(),
        });
        self.tables.push((file.to_owned(), table));
    }

    fn fit(&mut self, name: impl Into<String>, fit: crate::trend::TrendFit) {
        self.report.fits.push(NamedFit { name: name.into(), fit });
    }

    fn check(&mut self, c: TheoremCheck) {
        self.report.checks.push(c);
    }

    fn point_error(&mut self, msg: String) {
        self.report.counters.point_errors += 1;
        self.report.errors.push(msg);
    }
}

/// Output directory: explicit flag, then [`OUT_DIR_ENV`], then the config.
pub fn resolve_out_dir(cfg: &ExperimentConfig, flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(&cfg.output),
    }
}

/// Runs the experiment without touching the filesystem (except to read
/// ingest inputs).
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let seed = SeedSpec::new(cfg.seed).split(&cfg.kind.to_string(), 0);
    let mut out = RunOutput::new(cfg);
    match cfg.kind {
        ExperimentKind::LineSweep => line_sweep(cfg, &seed, &mut out)?,
        ExperimentKind::MixSweep => mix_sweep(cfg, &seed, &mut out)?,
        ExperimentKind::EnsembleCheck => ensemble_check(cfg, &seed, &mut out)?,
        ExperimentKind::FilterExperiment => filter_experiment(cfg, &seed, &mut out)?,
        ExperimentKind::ResidualScaling => residual_scaling(cfg, &seed, &mut out)?,
        ExperimentKind::IngestFit => ingest_fit(cfg, &mut out)?,
    }
    Ok(out)
}

/// Runs the experiment and writes its result tables, `report.json` and
/// `timing.json` into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport> {
    let start = Instant::now();
    let out = execute(cfg)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (file, table) in &out.tables {
        emit_csv(table, &out_dir.join(file))?;
    }
    let report_path = out_dir.join("report.json");
    std::fs::write(&report_path, out.report.to_json()).map_err(|e| Error::io(&report_path, e))?;
    let timing_path = out_dir.join("timing.json");
    let timing = serde_json::json!({ "wall_clock_seconds": start.elapsed().as_secs_f64() });
    std::fs::write(&timing_path, format!("{timing}\n")).map_err(|e| Error::io(&timing_path, e))?;
    Ok(out.report)
}

fn label(n: u64, xi: f64) -> String {
    format!("n={n},xi={}", fmt_g9(xi))
}

struct LinePoint {
    n: u64,
    xi: f64,
    acc1: Vec<f64>,
    se1: Vec<f64>,
    acc2: Option<Vec<(f64, f64)>>,
    closed1: f64,
    adjusted1: f64,
    closed2: Option<f64>,
}

fn line_sweep(cfg: &ExperimentConfig, seed: &SeedSpec, out: &mut RunOutput) -> Result<()> {
    let p = cfg.line_sweep.as_ref().expect("validated");
    let dim = cfg.geometry.dim.expect("validated");
    let trials = cfg.trials();
    let theta = cfg.vector("theta")?;
    let t1 = cfg.vector("test1")?;
    let t2 = if cfg.geometry.vectors.contains_key("test2") {
        Some((cfg.vector("test2")?, cfg.rho("test2")?))
    } else {
        None
    };
    let ns: Vec<u64> = if cfg.grids.n.is_empty() {
        cfg.grids
            .n_over_d
            .iter()
            .map(|r| ((r * dim as f64).round() as u64).max(1))
            .collect()
    } else {
        cfg.grids.n.clone()
    };
    let grid: Vec<(u64, f64)> = ns
        .iter()
        .flat_map(|&n| cfg.grids.xi.iter().map(move |&xi| (n, xi)))
        .collect();
    let (rho_train, rho1) = (cfg.rho("train")?, cfg.rho("test1")?);

    let per_noise: Vec<Result<Vec<LinePoint>>> = p
        .noise
        .par_iter()
        .map(|&noise| {
            let idx = NoiseFamily::ALL.iter().position(|f| *f == noise).expect("listed") as u64;
            let nseed = seed.split("noise", idx);
            let train = DistributionSpec::new(theta.clone(), rho_train, noise)?;
            let test1 = DistributionSpec::new(t1.clone(), rho1, noise)?;
            let test2 = t2
                .as_ref()
                .map(|(v, r)| DistributionSpec::new(v.clone(), *r, noise))
                .transpose()?;
            let families: Vec<TrainedModelSpec> = grid
                .iter()
                .map(|&(n, xi)| TrainedModelSpec::new(train.clone(), n, xi))
                .collect::<Result<_>>()?;
            let models: Vec<LinearModel> = families
                .par_iter()
                .enumerate()
                .flat_map_iter(|(pi, fam)| {
                    let pseed = nseed.split("point", pi as u64);
                    (0..trials).map(move |t| sample_trained_model(fam, &mut pseed.stream("model", t)))
                })
                .collect();
            let accuracies = |test: &DistributionSpec, purpose: &str| -> Result<Vec<(f64, f64)>> {
                match p.accuracy {
                    LineAccuracy::MonteCarlo => {
                        let m = p.m.expect("validated");
                        Ok(mc_accuracy_batch(&models, test, m, &mut nseed.stream(purpose, 0))?
                            .into_iter()
                            .map(|e| (e.accuracy, e.stderr))
                            .collect())
                    }
                    LineAccuracy::Exact => models
                        .iter()
                        .map(|w| Ok((conditional_accuracy(w, test)?.value(), 0.0)))
                        .collect(),
                }
            };
            let a1 = accuracies(&test1, "test1")?;
            let a2 = test2.as_ref().map(|t| accuracies(t, "test2")).transpose()?;
            let t = trials as usize;
            families
                .iter()
                .enumerate()
                .map(|(pi, fam)| {
                    let range = pi * t..(pi + 1) * t;
                    Ok(LinePoint {
                        n: fam.n,
                        xi: fam.xi,
                        acc1: a1[range.clone()].iter().map(|x| x.0).collect(),
                        se1: a1[range.clone()].iter().map(|x| x.1).collect(),
                        acc2: a2.as_ref().map(|a| a[range.clone()].to_vec()),
                        closed1: closed_form_accuracy(fam, &test1)?.value(),
                        adjusted1: signal_adjusted_accuracy(fam, &test1)?.value(),
                        closed2: test2
                            .as_ref()
                            .map(|t| closed_form_accuracy(fam, t).map(|p| p.value()))
                            .transpose()?,
                    })
                })
                .collect()
        })
        .collect();

    let clamp_m = match p.accuracy {
        LineAccuracy::MonteCarlo => p.m.expect("validated"),
        LineAccuracy::Exact => EXACT_M,
    };
    let mut table = Table::new(&[
        "noise", "n", "xi", "trial", "acc1", "stderr1", "acc2", "stderr2", "u", "v", "closed_form1",
        "closed_form2",
    ]);
    let theory = match &t2 {
        Some((v, r)) => Some(theoretical_slope(
            &theta,
            &DistributionSpec::gaussian(t1.clone(), rho1)?,
            &DistributionSpec::gaussian(v.clone(), *r)?,
        )?),
        None => None,
    };
    // (mean, stderr) of acc1 per noise family and grid point, for the
    // cross-family comparison.
    let mut means: Vec<Vec<(f64, f64)>> = Vec::new();
    for (noise, points) in p.noise.iter().zip(per_noise) {
        let points = points?;
        let mut uv = Vec::new();
        let mut fam_means = Vec::new();
        for pt in &points {
            for t in 0..pt.acc1.len() {
                let a1 = pt.acc1[t];
                let u = clamp_accuracy(a1, clamp_m).and_then(probit);
                let (a2, se2, v) = match &pt.acc2 {
                    Some(a) => (
                        Some(a[t].0),
                        Some(a[t].1),
                        Some(clamp_accuracy(a[t].0, clamp_m).and_then(probit)),
                    ),
                    None => (None, None, None),
                };
                let u = match u {
                    Ok(u) => Some(u),
                    Err(e) => {
                        out.point_error(format!("{noise} {} trial {t}: {e}", label(pt.n, pt.xi)));
                        None
                    }
                };
                let v = match v {
                    Some(Ok(v)) => Some(v),
                    Some(Err(e)) => {
                        out.point_error(format!("{noise} {} trial {t}: {e}", label(pt.n, pt.xi)));
                        None
                    }
                    None => None,
                };
                if let (Some(u), Some(v)) = (u, v) {
                    uv.push((u, v));
                }
                table.push(vec![
                    noise.to_string().into(),
                    pt.n.into(),
                    pt.xi.into(),
                    t.into(),
                    a1.into(),
                    pt.se1[t].into(),
                    a2.into(),
                    se2.into(),
                    u.into(),
                    v.into(),
                    pt.closed1.into(),
                    pt.closed2.into(),
                ]);
            }
            let (mean, se) = mean_and_stderr(&pt.acc1);
            fam_means.push((mean, se));
            if let Some(tol) = p.closed_form_tol {
                out.check(
                    TheoremCheck::at_most(
                        format!("closed_form[{noise},{}]", label(pt.n, pt.xi)),
                        "closed-form accuracy of the random-model family",
                        format!("|mean accuracy - closed form| <= {}", fmt_g9(tol)),
                        (mean - pt.closed1).abs(),
                        tol,
                    )
                    .with("mean_accuracy", mean)
                    .with("stderr", se)
                    .with("closed_form", pt.closed1)
                    .with("signal_adjusted", pt.adjusted1),
                );
            }
        }
        means.push(fam_means);

        if let Some(theory) = theory {
            let fits = [FitMode::ThroughOrigin, FitMode::Free]
                .map(|mode| fit_trend(&uv, mode).map(|f| (mode, f)));
            for r in fits {
                match r {
                    Ok((mode, fit)) => {
                        match mode {
                            FitMode::ThroughOrigin => {
                                if let Some(tol) = p.slope_tol {
                                    let rel = (fit.slope / theory - 1.0).abs();
                                    out.check(
                                        TheoremCheck::at_most(
                                            format!("line_slope[{noise}]"),
                                            "accuracy on the line",
                                            format!("|fitted slope / theoretical slope - 1| <= {}", fmt_g9(tol)),
                                            rel,
                                            tol,
                                        )
                                        .with("fitted_slope", fit.slope)
                                        .with("theoretical_slope", theory),
                                    );
                                }
                            }
                            FitMode::Free => {
                                if let Some(tol) = p.intercept_tol {
                                    out.check(
                                        TheoremCheck::at_most(
                                            format!("line_intercept[{noise}]"),
                                            "universal lines pass through the origin",
                                            format!("|free-fit intercept| <= {}", fmt_g9(tol)),
                                            fit.intercept.abs(),
                                            tol,
                                        )
                                        .with("intercept", fit.intercept)
                                        .with("free_slope", fit.slope),
                                    );
                                }
                            }
                        }
                        out.fit(format!("{noise}/{mode}"), fit);
                    }
                    Err(e) => out.point_error(format!("{noise} fit: {e}")),
                }
            }
        }
    }

    if p.noise.len() > 1 {
        let sigmas = p.universality_sigmas.unwrap_or(3.0);
        for (gi, &(n, xi)) in grid.iter().enumerate() {
            for a in 0..p.noise.len() {
                for b in a + 1..p.noise.len() {
                    let (ma, sa) = means[a][gi];
                    let (mb, sb) = means[b][gi];
                    let combined = (sa * sa + sb * sb).sqrt();
                    out.check(
                        TheoremCheck::at_most(
                            format!("universality[{}~{},{}]", p.noise[a], p.noise[b], label(n, xi)),
                            "noise-family universality",
                            format!("|mean difference| <= {} combined standard errors", fmt_g9(sigmas)),
                            (ma - mb).abs(),
                            sigmas * combined,
                        )
                        .with("mean_a", ma)
                        .with("mean_b", mb)
                        .with("combined_stderr", combined),
                    );
                }
            }
        }
    }
    out.add_table("line_sweep.csv", table);
    Ok(())
}

struct Pair {
    name: String,
    spec1: DistributionSpec,
    spec2: DistributionSpec,
    test1: DistributionSpec,
    test2: DistributionSpec,
}

fn random_pair(seed: &SeedSpec, g: u64, dim: usize) -> Result<Pair> {
    let mut s = seed.stream("geometry", g);
    let draw = |s: &mut crate::numerics::RandomStream| {
        let mut v = vec![0.0; dim];
        NoiseFamily::Gaussian.fill(s, &mut v);
        v
    };
    let t1 = draw(&mut s);
    let t2 = draw(&mut s);
    let mut a = draw(&mut s);
    let mut b = draw(&mut s);
    // Both sources on the positive side of the reference test direction, so
    // no mixture is orthogonal to it.
    for v in [&mut a, &mut b] {
        if crate::numerics::vector::dot(v, &t1) < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    let mut rho = || s.random_range(0.5..2.0);
    Ok(Pair {
        name: format!("random-{g}"),
        spec1: DistributionSpec::gaussian(a, rho())?,
        spec2: DistributionSpec::gaussian(b, rho())?,
        test1: DistributionSpec::gaussian(t1, rho())?,
        test2: DistributionSpec::gaussian(t2, rho())?,
    })
}

fn mix_sweep(cfg: &ExperimentConfig, seed: &SeedSpec, out: &mut RunOutput) -> Result<()> {
    let p = cfg.mix_sweep.as_ref().expect("validated");
    let alphas = &cfg.grids.alpha;
    let configured = Pair {
        name: "configured".into(),
        spec1: DistributionSpec::gaussian(cfg.vector("source1")?, cfg.rho("source1")?)?,
        spec2: DistributionSpec::gaussian(cfg.vector("source2")?, cfg.rho("source2")?)?,
        test1: DistributionSpec::gaussian(cfg.vector("test1")?, cfg.rho("test1")?)?,
        test2: DistributionSpec::gaussian(cfg.vector("test2")?, cfg.rho("test2")?)?,
    };
    let gseed = seed.split("random-geometries", 0);
    let mut pairs = vec![configured];
    for g in 0..p.random_geometries {
        pairs.push(random_pair(&gseed, g, p.random_dim)?);
    }

    let mut table = Table::new(&["geometry", "alpha", "n1", "n2", "slope", "error"]);
    let mut failed_interp = 0u64;
    let mut failed_endpoints = 0u64;
    let mut worst_excursion = 0.0f64;
    let mut endpoint_checked = 0u64;
    for pair in &pairs {
        let sweep = mixture_slope_sweep(&pair.spec1, &pair.spec2, p.n_total, alphas, &pair.test1, &pair.test2)?;
        let mut slopes = Vec::with_capacity(sweep.len());
        let mut complete = true;
        for pt in &sweep {
            let (slope, err) = match &pt.slope {
                Ok(s) => {
                    slopes.push(*s);
                    (Cell::Float(*s), Cell::Empty)
                }
                Err(e) => {
                    complete = false;
                    out.point_error(format!("{} alpha={}: {e}", pair.name, fmt_g9(pt.alpha)));
                    (Cell::Empty, Cell::Str(e.clone()))
                }
            };
            table.push(vec![pair.name.as_str().into(), pt.alpha.into(), pt.n1.into(), pt.n2.into(), slope, err]);
        }
        let single1 = theoretical_slope(pair.spec1.theta(), &pair.test1, &pair.test2)?;
        let single2 = theoretical_slope(pair.spec2.theta(), &pair.test1, &pair.test2)?;
        let tol = 1e-12 * single1.abs().max(single2.abs()).max(1.0);
        let ic = check_interpolation(&slopes, single1, single2, tol);
        worst_excursion = worst_excursion.max(ic.max_excursion);
        if !(complete && ic.within_bounds && ic.monotone) {
            failed_interp += 1;
            out.report
                .warnings
                .push(format!("{}: interpolation failed ({ic:?})", pair.name));
        }
        // Endpoints are compared bit for bit.
        let mut ends_ok = true;
        for pt in &sweep {
            let want = if pt.n1 == 0 {
                Some(single2)
            } else if pt.n2 == 0 {
                Some(single1)
            } else {
                None
            };
            if let Some(w) = want {
                endpoint_checked += 1;
                ends_ok &= pt.slope.as_ref().ok() == Some(&w);
            }
        }
        if !ends_ok {
            failed_endpoints += 1;
        }
    }
    let geometries = pairs.len() as f64;
    out.check(
        TheoremCheck::at_most(
            "mixture_interpolation",
            "mixing interpolates between source slopes",
            "geometries with a slope outside the endpoint range or a non-monotone sweep <= 0",
            failed_interp as f64,
            0.0,
        )
        .with("geometries", geometries)
        .with("alpha_points", alphas.len() as f64)
        .with("max_excursion", worst_excursion),
    );
    out.check(
        TheoremCheck::at_most(
            "mixture_endpoints",
            "mixing interpolates between source slopes",
            "geometries whose single-source endpoints differ from the source slopes <= 0",
            failed_endpoints as f64,
            0.0,
        )
        .with("endpoints_compared", endpoint_checked as f64),
    );
    out.add_table("mix_sweep.csv", table);

    if !p.mc_alpha.is_empty() {
        mix_monte_carlo(cfg, &pairs[0], seed, out)?;
    }
    Ok(())
}

fn mix_monte_carlo(cfg: &ExperimentConfig, pair: &Pair, seed: &SeedSpec, out: &mut RunOutput) -> Result<()> {
    let p = cfg.mix_sweep.as_ref().expect("validated");
    let m = p.m.expect("validated");
    let trials = cfg.trials();
    let n_ref = *p.mc_n_total.iter().max().expect("validated");
    let mseed = seed.split("mix-mc", 0);

    type McResult = Result<(Vec<(u64, u64, f64, f64)>, f64)>;
    let per_alpha: Vec<McResult> = p
        .mc_alpha
        .par_iter()
        .enumerate()
        .map(|(ai, &alpha)| {
            let aseed = mseed.split("alpha", ai as u64);
            let jobs: Vec<(u64, u64)> = p
                .mc_n_total
                .iter()
                .flat_map(|&n| (0..trials).map(move |t| (n, t)))
                .collect();
            let models: Vec<LinearModel> = jobs
                .par_iter()
                .enumerate()
                .map(|(ji, &(n, _))| {
                    let mut s = aseed.stream("train", ji as u64);
                    let (n1, n2) = alpha_counts(alpha, n);
                    let mut parts = Vec::new();
                    for (spec, k, name) in [(&pair.spec1, n1, "source1"), (&pair.spec2, n2, "source2")] {
                        if k > 0 {
                            parts.push(sample_dataset(spec, k as usize, &mut s)?.with_source(name));
                        }
                    }
                    let refs: Vec<(&crate::synthetic::LabeledDataset, usize)> =
                        parts.iter().map(|d| (d, d.len())).collect();
                    train_linear(&mix_many(&refs, &mut s)?)
                })
                .collect::<Result<_>>()?;
            let a1 = mc_accuracy_batch(&models, &pair.test1, m, &mut aseed.stream("test1", 0))?;
            let a2 = mc_accuracy_batch(&models, &pair.test2, m, &mut aseed.stream("test2", 0))?;
            let (n1, n2) = alpha_counts(alpha, n_ref);
            let mix = MixtureSpec::pair(pair.spec1.clone(), n1, pair.spec2.clone(), n2)?;
            let theory = theoretical_slope(&effective_spec(&mix)?.theta_bar, &pair.test1, &pair.test2)?;
            let rows = jobs
                .iter()
                .zip(a1.iter().zip(&a2))
                .map(|(&(n, t), (x, y))| (n, t, x.accuracy, y.accuracy))
                .collect();
            Ok((rows, theory))
        })
        .collect();

    let mut table = Table::new(&["alpha", "n_total", "trial", "acc1", "acc2", "u", "v"]);
    for (&alpha, r) in p.mc_alpha.iter().zip(per_alpha) {
        let (rows, theory) = r?;
        let mut uv = Vec::new();
        for (n, t, a1, a2) in rows {
            let u = clamp_accuracy(a1, m).and_then(probit)?;
            let v = clamp_accuracy(a2, m).and_then(probit)?;
            uv.push((u, v));
            table.push(vec![alpha.into(), n.into(), t.into(), a1.into(), a2.into(), u.into(), v.into()]);
        }
        match fit_trend(&uv, FitMode::ThroughOrigin) {
            Ok(fit) => {
                out.check(
                    TheoremCheck::at_most(
                        format!("mixture_mc_slope[alpha={}]", fmt_g9(alpha)),
                        "mixture slope formula",
                        format!("|fitted slope / predicted slope - 1| <= {}", fmt_g9(p.mc_slope_tol)),
                        (fit.slope / theory - 1.0).abs(),
                        p.mc_slope_tol,
                    )
                    .with("fitted_slope", fit.slope)
                    .with("predicted_slope", theory),
                );
                out.fit(format!("mix_mc/alpha={}", fmt_g9(alpha)), fit);
            }
            Err(e) => out.point_error(format!("alpha={}: {e}", fmt_g9(alpha))),
        }
    }
    out.add_table("mix_mc.csv", table);
    Ok(())
}

fn ensemble_check(cfg: &ExperimentConfig, seed: &SeedSpec, out: &mut RunOutput) -> Result<()> {
    let p = cfg.ensemble_check.as_ref().expect("validated");
    let rows: Vec<Result<(usize, u64, u64, f64)>> = (0..cfg.trials())
        .into_par_iter()
        .map(|t| {
            let mut s = seed.stream("pair", t);
            let d = s.random_range(1..=p.max_dim);
            let n1 = s.random_range(1..=p.max_n);
            let n2 = s.random_range(1..=p.max_n);
            let spec = |s: &mut crate::numerics::RandomStream| -> Result<DistributionSpec> {
                let mut theta = vec![0.0; d];
                NoiseFamily::Gaussian.fill(s, &mut theta);
                let noise = NoiseFamily::ALL[s.random_range(0..NoiseFamily::ALL.len())];
                DistributionSpec::new(theta, s.random_range(0.25..4.0), noise)
            };
            let (spec1, spec2) = (spec(&mut s)?, spec(&mut s)?);
            let ds1 = sample_dataset(&spec1, n1 as usize, &mut s)?.with_source("a");
            let ds2 = sample_dataset(&spec2, n2 as usize, &mut s)?.with_source("b");
            let ens = ensemble_models(
                &[train_linear(&ds1)?, train_linear(&ds2)?],
                &[n1 as f64, n2 as f64],
            )?;
            let union = train_linear(&mix_many(&[(&ds1, ds1.len()), (&ds2, ds2.len())], &mut s)?)?;
            let diff = ens
                .weights()
                .iter()
                .zip(union.weights())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            Ok((d, n1, n2, diff))
        })
        .collect();
    let mut table = Table::new(&["pair", "d", "n1", "n2", "max_abs_diff"]);
    let mut worst = 0.0f64;
    for (t, r) in rows.into_iter().enumerate() {
        let (d, n1, n2, diff) = r?;
        worst = worst.max(diff);
        table.push(vec![t.into(), d.into(), n1.into(), n2.into(), diff.into()]);
    }
    out.check(
        TheoremCheck::at_most(
            "input_output_mixing",
            "input and output mixing coincide",
            format!("max coordinate |ensemble - union model| <= {}", fmt_g9(p.tol)),
            worst,
            p.tol,
        )
        .with("pairs", cfg.trials() as f64),
    );
    out.add_table("ensemble_check.csv", table);
    Ok(())
}

fn filter_experiment(cfg: &ExperimentConfig, seed: &SeedSpec, out: &mut RunOutput) -> Result<()> {
    let p = cfg.filter_experiment.as_ref().expect("validated");
    let geometry = FilterGeometry {
        theta_id: cfg.vector("id")?,
        rho_id: cfg.rho("id")?,
        theta_ood: cfg.vector("ood")?,
        rho_ood: cfg.rho("ood")?,
        theta_train: cfg.vector("train")?,
        rho_train: cfg.rho("train")?,
        theta_pre: cfg.vector("pre")?,
    };
    let trials = cfg.trials();
    let n = p.n as usize;
    let control_kind = FilterKind::HardThreshold { tau: f64::NEG_INFINITY };
    let mut variants: Vec<(String, FilterKind)> = vec![
        ("filtered".into(), p.filter),
        ("control".into(), control_kind),
    ];
    let tau = match p.filter {
        FilterKind::HardThreshold { tau } | FilterKind::Logistic { tau, .. } if tau.is_finite() => tau,
        _ => 0.0,
    };
    for (i, &beta) in cfg.grids.beta.iter().enumerate() {
        variants.push((format!("beta-{i}"), FilterKind::Logistic { tau, beta }));
    }
    let results: Vec<Result<FilterExperiment>> = variants
        .par_iter()
        .map(|(name, kind)| slope_ordering_experiment(&geometry, n, trials, *kind, &seed.split(name, 0)))
        .collect();
    let results: Vec<FilterExperiment> = results.into_iter().collect::<Result<_>>()?;

    let mut table = Table::new(&[
        "variant",
        "filter",
        "slope_unfiltered",
        "slope_filtered",
        "slope_pretrained",
        "filtered_slope_se",
        "parallel_shift",
        "parallel_shift_se",
        "orthogonal_deviation",
        "rejections",
    ]);
    for ((name, kind), r) in variants.iter().zip(&results) {
        out.report.counters.retries += r.rejections;
        table.push(vec![
            name.as_str().into(),
            describe_filter(kind).into(),
            r.slopes.unfiltered.into(),
            r.slopes.filtered.into(),
            r.slopes.pretrained.into(),
            r.filtered_slope_se.into(),
            r.parallel_shift.into(),
            r.parallel_shift_se.into(),
            r.orthogonal_deviation.into(),
            r.rejections.into(),
        ]);
    }
    let main = &results[0];
    let control = &results[1];
    let theorem = "filtering improves robustness";
    out.check(
        TheoremCheck::greater(
            "filtered_slope_gap",
            theorem,
            format!(
                "slope(mean filtered) - slope(unfiltered) > {} standard errors",
                fmt_g9(p.gap_sigmas)
            ),
            main.slopes.filtered - main.slopes.unfiltered,
            p.gap_sigmas * main.filtered_slope_se,
        )
        .with("slope_filtered", main.slopes.filtered)
        .with("slope_unfiltered", main.slopes.unfiltered)
        .with("stderr", main.filtered_slope_se),
    );
    out.check(
        TheoremCheck::at_most(
            "filtered_slope_ceiling",
            theorem,
            "slope(mean filtered) <= slope(pretrained)",
            main.slopes.filtered,
            main.slopes.pretrained,
        ),
    );
    out.check(
        TheoremCheck::at_most(
            "constant_filter_control",
            theorem,
            format!(
                "constant-h slope - slope(unfiltered) <= {} standard errors",
                fmt_g9(p.control_sigmas)
            ),
            control.slopes.filtered - control.slopes.unfiltered,
            p.control_sigmas * control.filtered_slope_se,
        )
        .with("slope_control", control.slopes.filtered)
        .with("stderr", control.filtered_slope_se),
    );
    let sweep = &results[2..];
    if sweep.len() > 1 {
        let worst_drop = sweep
            .windows(2)
            .map(|w| {
                let se = (w[0].filtered_slope_se.powi(2) + w[1].filtered_slope_se.powi(2)).sqrt();
                (w[0].slopes.filtered - w[1].slopes.filtered) / se
            })
            .fold(f64::NEG_INFINITY, f64::max);
        let mut c = TheoremCheck::at_most(
            "filter_strength_monotone",
            theorem,
            "largest decrease of the filtered slope between consecutive beta <= 3 combined standard errors",
            worst_drop,
            3.0,
        );
        for (b, r) in cfg.grids.beta.iter().zip(sweep) {
            c = c.with(&format!("slope_beta_{}", fmt_g9(*b)), r.slopes.filtered);
        }
        out.check(c);
    }
    out.add_table("filter_experiment.csv", table);
    Ok(())
}

fn describe_filter(kind: &FilterKind) -> String {
    match *kind {
        FilterKind::HardThreshold { tau } => format!("hard_threshold(tau={})", fmt_g9(tau)),
        FilterKind::Logistic { tau, beta } => format!("logistic(tau={},beta={})", fmt_g9(tau), fmt_g9(beta)),
        FilterKind::TopQuantile { q } => format!("top_quantile(q={})", fmt_g9(q)),
    }
}

fn residual_scaling(cfg: &ExperimentConfig, seed: &SeedSpec, out: &mut RunOutput) -> Result<()> {
    let p = cfg.residual_scaling.as_ref().expect("validated");
    let rc = ResidualScalingConfig {
        dims: cfg.grids.d.clone(),
        n_over_d: p.n_over_d,
        xi: p.xi,
        rho: p.rho,
        shift_angle_deg: p.shift_angle_deg,
        trials: cfg.trials(),
        source: p.accuracy,
    };
    let rows = residual_scaling_report(&rc, seed)?;
    let mut table = Table::new(&["d", "n", "mean_abs_residual", "stderr"]);
    for r in &rows {
        table.push(vec![r.d.into(), r.n.into(), r.mean_abs_residual.into(), r.stderr.into()]);
    }
    let worst_step = rows
        .windows(2)
        .map(|w| w[1].mean_abs_residual - w[0].mean_abs_residual)
        .fold(f64::NEG_INFINITY, f64::max);
    if rows.len() > 1 {
        let mut c = TheoremCheck::greater(
            "residual_scaling",
            "residual shrinks with dimension",
            "largest step of mean |residual| along the d grid < 0",
            -worst_step,
            0.0,
        );
        for r in &rows {
            c = c.with(&format!("mean_abs_residual_d{}", r.d), r.mean_abs_residual);
        }
        out.check(c);
    }
    out.add_table("residual_scaling.csv", table);
    Ok(())
}

fn ingest_fit(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<()> {
    let p = cfg.ingest_fit.as_ref().expect("validated");
    let path = cfg.resolve_input(&p.input);
    let ingested = ingest_accuracies(&path, &p.filter)?;
    for e in &ingested.errors {
        out.report.warnings.push(format!("{}: {e}", p.input));
    }
    let mut by_shift: BTreeMap<&str, Vec<&crate::trend::AccuracyRecord>> = BTreeMap::new();
    for r in &ingested.records {
        by_shift.entry(r.shift_name.as_str()).or_default().push(r);
    }
    let mut table = Table::new(&[
        "model_id",
        "shift_name",
        "ref_accuracy",
        "shift_accuracy",
        "u",
        "v",
        "clamped",
        "effective_robustness",
    ]);
    for (shift, recs) in &by_shift {
        let owned: Vec<_> = recs.iter().map(|r| (*r).clone()).collect();
        let fit = match fit_records(&owned, p.mode, p.exclude_clamped) {
            Ok(f) => {
                if f.n_clamped > 0 {
                    out.report
                        .warnings
                        .push(format!("{shift}: {} clamped accuracies", f.n_clamped));
                }
                out.fit(format!("{shift}/{}", p.mode), f.clone());
                Some(f)
            }
            Err(e) => {
                out.point_error(format!("{shift}: {e}"));
                None
            }
        };
        for r in recs {
            let pt = to_probit_point(r)?;
            let er = fit.as_ref().map(|f| effective_robustness(r, f)).transpose()?;
            table.push(vec![
                r.model_id.as_str().into(),
                shift.to_string().into(),
                r.ref_accuracy.value().into(),
                r.shift_accuracy.value().into(),
                pt.u.into(),
                pt.v.into(),
                u64::from(pt.clamped).into(),
                er.into(),
            ]);
        }
    }
    out.add_table("ingest_fit.csv", table);
    Ok(())
}
