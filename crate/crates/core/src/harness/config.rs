//! Versioned TOML experiment configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filtering::FilterKind;
use crate::numerics::vector::{basis, planar_unit};
use crate::synthetic::NoiseFamily;
use crate::trend::{AccuracySource, FitMode};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    LineSweep,
    MixSweep,
    EnsembleCheck,
    FilterExperiment,
    ResidualScaling,
    IngestFit,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::LineSweep => "line_sweep",
            ExperimentKind::MixSweep => "mix_sweep",
            ExperimentKind::EnsembleCheck => "ensemble_check",
            ExperimentKind::FilterExperiment => "filter_experiment",
            ExperimentKind::ResidualScaling => "residual_scaling",
            ExperimentKind::IngestFit => "ingest_fit",
        })
    }
}

/// A direction given by exactly one of: explicit coordinates, a basis axis,
/// an angle in a coordinate plane (measured from the plane's first axis), or
/// the normalized all-ones vector.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VectorDef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coords: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plane: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degrees: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniform: Option<bool>,
}

impl VectorDef {
    pub fn resolve(&self, dim: usize) -> std::result::Result<Vec<f64>, String> {
        let forms = [
            self.coords.is_some(),
            self.axis.is_some(),
            self.plane.is_some() || self.degrees.is_some(),
            self.uniform.is_some(),
        ];
        if forms.iter().filter(|f| **f).count() != 1 {
            return Err("give exactly one of coords, axis, plane+degrees, uniform".into());
        }
        if let Some(c) = &self.coords {
            if c.len() != dim {
                return Err(format!("has {} coordinates but dim is {dim}", c.len()));
            }
            if c.iter().any(|x| !x.is_finite()) || c.iter().all(|x| *x == 0.0) {
                return Err("coords must be finite and not all zero".into());
            }
            return Ok(c.clone());
        }
        if let Some(a) = self.axis {
            if a >= dim {
                return Err(format!("axis {a} out of range for dim {dim}"));
            }
            return Ok(basis(dim, a));
        }
        if let Some(u) = self.uniform {
            if !u {
                return Err("uniform must be true when given".into());
            }
            return Ok(vec![1.0 / (dim as f64).sqrt(); dim]);
        }
        match (self.plane, self.degrees) {
            (Some([a, b]), Some(deg)) if deg.is_finite() => {
                planar_unit(dim, a, b, deg).map_err(|e| e.to_string())
            }
            _ => Err("plane and degrees must be given together".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default)]
    pub vectors: BTreeMap<String, VectorDef>,
    #[serde(default)]
    pub rho: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grids {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub n: Vec<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub n_over_d: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub xi: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub d: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alpha: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineAccuracy {
    #[default]
    MonteCarlo,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSweepParams {
    #[serde(default)]
    pub accuracy: LineAccuracy,
    /// Test draws per distribution for Monte Carlo accuracy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<u64>,
    #[serde(default = "default_noise")]
    pub noise: Vec<NoiseFamily>,
    /// Bound on |mean accuracy - closed form| per grid point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_form_tol: Option<f64>,
    /// Relative bound on the through-origin slope.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intercept_tol: Option<f64>,
    /// Noise families must agree within this many combined standard errors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub universality_sigmas: Option<f64>,
}

fn default_noise() -> Vec<NoiseFamily> {
    vec![NoiseFamily::Gaussian]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixSweepParams {
    /// Samples behind each exact sweep point.
    pub n_total: u64,
    pub random_geometries: u64,
    pub random_dim: usize,
    /// Mixing fractions for the Monte Carlo slope fits.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mc_alpha: Vec<f64>,
    /// Training-set sizes per Monte Carlo fit.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mc_n_total: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<u64>,
    #[serde(default = "default_mc_tol")]
    pub mc_slope_tol: f64,
}

fn default_mc_tol() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleParams {
    pub max_dim: usize,
    pub max_n: u64,
    #[serde(default = "default_ensemble_tol")]
    pub tol: f64,
}

fn default_ensemble_tol() -> f64 {
    1e-12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterParams {
    pub n: u64,
    pub filter: FilterKind,
    #[serde(default = "default_gap_sigmas")]
    pub gap_sigmas: f64,
    #[serde(default = "default_control_sigmas")]
    pub control_sigmas: f64,
}

fn default_gap_sigmas() -> f64 {
    3.0
}

fn default_control_sigmas() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualParams {
    pub n_over_d: f64,
    #[serde(default = "one")]
    pub xi: f64,
    #[serde(default = "one")]
    pub rho: f64,
    pub shift_angle_deg: f64,
    #[serde(default)]
    pub accuracy: AccuracySource,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestParams {
    /// Relative paths resolve against the config file's directory.
    pub input: String,
    #[serde(default)]
    pub filter: String,
    #[serde(default = "free")]
    pub mode: FitMode,
    #[serde(default)]
    pub exclude_clamped: bool,
}

fn free() -> FitMode {
    FitMode::Free
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    pub output: String,
    #[serde(default)]
    pub geometry: Geometry,
    #[serde(default)]
    pub grids: Grids,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line_sweep: Option<LineSweepParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mix_sweep: Option<MixSweepParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble_check: Option<EnsembleParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_experiment: Option<FilterParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_scaling: Option<ResidualParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ingest_fit: Option<IngestParams>,
    /// Directory that relative input paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Vector and SNR names each kind reads from the geometry table.
fn geometry_names(kind: ExperimentKind) -> (&'static [&'static str], &'static [&'static str], &'static [&'static str]) {
    // (required vectors, optional vectors, required rho)
    match kind {
        ExperimentKind::LineSweep => (&["theta", "test1"], &["test2"], &["train", "test1"]),
        ExperimentKind::MixSweep => (
            &["source1", "source2", "test1", "test2"],
            &[],
            &["source1", "source2", "test1", "test2"],
        ),
        ExperimentKind::FilterExperiment => (
            &["id", "ood", "train", "pre"],
            &[],
            &["id", "ood", "train"],
        ),
        _ => (&[], &[], &[]),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(vec![e.message().to_owned()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msgs) => Error::Config(
                msgs.into_iter()
                    .map(|m| format!("{}: {m}", path.display()))
                    .collect(),
            ),
            other => other,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Collects every problem instead of stopping at the first.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            errs.push(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            ));
        }
        if self.output.trim().is_empty() {
            errs.push("output: must be non-empty".into());
        }
        let kind = self.kind;
        let needs_trials = kind != ExperimentKind::IngestFit;
        match (needs_trials, self.trials) {
            (true, None) => errs.push("trials: required".into()),
            (true, Some(0)) => errs.push("trials: must be positive".into()),
            (false, Some(_)) => errs.push(format!("trials: not used by {kind}")),
            _ => {}
        }

        let sections = [
            (ExperimentKind::LineSweep, self.line_sweep.is_some()),
            (ExperimentKind::MixSweep, self.mix_sweep.is_some()),
            (ExperimentKind::EnsembleCheck, self.ensemble_check.is_some()),
            (ExperimentKind::FilterExperiment, self.filter_experiment.is_some()),
            (ExperimentKind::ResidualScaling, self.residual_scaling.is_some()),
            (ExperimentKind::IngestFit, self.ingest_fit.is_some()),
        ];
        for (k, present) in sections {
            if k == kind && !present {
                errs.push(format!("[{k}]: section required for kind {kind}"));
            } else if k != kind && present {
                errs.push(format!("[{k}]: section not used by kind {kind}"));
            }
        }

        self.validate_grids(&mut errs);
        self.validate_geometry(&mut errs);

        if let Some(p) = &self.line_sweep {
            if p.accuracy == LineAccuracy::MonteCarlo && !matches!(p.m, Some(m) if m > 0) {
                errs.push("line_sweep.m: required and positive for monte_carlo accuracy".into());
            }
            if p.noise.is_empty() {
                errs.push("line_sweep.noise: must be non-empty".into());
            }
            let mut seen = p.noise.clone();
            seen.sort_by_key(|n| n.to_string());
            seen.dedup();
            if seen.len() != p.noise.len() {
                errs.push("line_sweep.noise: duplicate family".into());
            }
            for (name, v) in [
                ("closed_form_tol", p.closed_form_tol),
                ("slope_tol", p.slope_tol),
                ("intercept_tol", p.intercept_tol),
                ("universality_sigmas", p.universality_sigmas),
            ] {
                if matches!(v, Some(x) if !(x > 0.0 && x.is_finite())) {
                    errs.push(format!("line_sweep.{name}: must be positive"));
                }
            }
            if (p.slope_tol.is_some() || p.intercept_tol.is_some())
                && !self.geometry.vectors.contains_key("test2")
            {
                errs.push("line_sweep.slope_tol: needs geometry vector test2".into());
            }
        }
        if let Some(p) = &self.mix_sweep {
            if p.n_total == 0 {
                errs.push("mix_sweep.n_total: must be positive".into());
            }
            if p.random_dim < 2 {
                errs.push("mix_sweep.random_dim: must be at least 2".into());
            }
            if !p.mc_alpha.is_empty() {
                if p.mc_n_total.is_empty() || p.mc_n_total.contains(&0) {
                    errs.push("mix_sweep.mc_n_total: non-empty positive sizes required with mc_alpha".into());
                }
                if !matches!(p.m, Some(m) if m > 0) {
                    errs.push("mix_sweep.m: required and positive with mc_alpha".into());
                }
                if p.mc_alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
                    errs.push("mix_sweep.mc_alpha: values must lie in [0, 1]".into());
                }
            }
        }
        if let Some(p) = &self.ensemble_check {
            if p.max_dim == 0 || p.max_n == 0 {
                errs.push("ensemble_check: max_dim and max_n must be positive".into());
            }
        }
        if let Some(p) = &self.filter_experiment {
            if p.n == 0 {
                errs.push("filter_experiment.n: must be positive".into());
            }
            if let Err(e) = p.filter.validate() {
                errs.push(format!("filter_experiment.filter: {e}"));
            }
            if self.trials == Some(1) {
                errs.push("trials: filter_experiment needs at least 2".into());
            }
        }
        if let Some(p) = &self.residual_scaling {
            if !(p.n_over_d > 0.0) {
                errs.push("residual_scaling.n_over_d: must be positive".into());
            }
            if !(p.xi > 0.0) || !(p.rho > 0.0) {
                errs.push("residual_scaling: xi and rho must be positive".into());
            }
            if let AccuracySource::MonteCarlo { m: 0 } = p.accuracy {
                errs.push("residual_scaling.accuracy.m: must be positive".into());
            }
        }
        if let Some(p) = &self.ingest_fit {
            if p.input.trim().is_empty() {
                errs.push("ingest_fit.input: must be non-empty".into());
            }
        }

        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    fn validate_grids(&self, errs: &mut Vec<String>) {
        let g = &self.grids;
        let kind = self.kind;
        let present = [
            ("n", !g.n.is_empty()),
            ("n_over_d", !g.n_over_d.is_empty()),
            ("xi", !g.xi.is_empty()),
            ("d", !g.d.is_empty()),
            ("alpha", !g.alpha.is_empty()),
            ("beta", !g.beta.is_empty()),
        ];
        let (required, optional): (&[&str], &[&str]) = match kind {
            ExperimentKind::LineSweep => (&["xi"], &["n", "n_over_d"]),
            ExperimentKind::MixSweep => (&["alpha"], &[]),
            ExperimentKind::FilterExperiment => (&[], &["beta"]),
            ExperimentKind::ResidualScaling => (&["d"], &[]),
            _ => (&[], &[]),
        };
        for (name, has) in present {
            if required.contains(&name) && !has {
                errs.push(format!("grids.{name}: must be non-empty for {kind}"));
            }
            if has && !required.contains(&name) && !optional.contains(&name) {
                errs.push(format!("grids.{name}: not used by {kind}"));
            }
        }
        if kind == ExperimentKind::LineSweep && g.n.is_empty() == g.n_over_d.is_empty() {
            errs.push("grids: line_sweep needs exactly one of n, n_over_d".into());
        }
        if g.n.contains(&0) {
            errs.push("grids.n: values must be positive".into());
        }
        for (name, v) in [("n_over_d", &g.n_over_d), ("xi", &g.xi)] {
            if v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                errs.push(format!("grids.{name}: values must be positive"));
            }
        }
        if g.alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
            errs.push("grids.alpha: values must lie in [0, 1]".into());
        }
        if g.alpha.windows(2).any(|w| w[0] >= w[1]) {
            errs.push("grids.alpha: must be strictly ascending".into());
        }
        if g.d.windows(2).any(|w| w[0] >= w[1]) || g.d.iter().any(|d| *d < 2) {
            errs.push("grids.d: must be strictly ascending and at least 2".into());
        }
        if g.beta.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            errs.push("grids.beta: values must be positive".into());
        }
    }

    fn validate_geometry(&self, errs: &mut Vec<String>) {
        let (req_v, opt_v, req_rho) = geometry_names(self.kind);
        let geo = &self.geometry;
        let uses_geometry = !req_v.is_empty();
        if !uses_geometry {
            if geo.dim.is_some() || !geo.vectors.is_empty() || !geo.rho.is_empty() {
                errs.push(format!("geometry: not used by {}", self.kind));
            }
            return;
        }
        let Some(dim) = geo.dim else {
            errs.push("geometry.dim: required".into());
            return;
        };
        if dim < 2 {
            errs.push("geometry.dim: must be at least 2".into());
            return;
        }
        for name in req_v {
            if !geo.vectors.contains_key(*name) {
                errs.push(format!("geometry.vectors.{name}: required"));
            }
        }
        for (name, def) in &geo.vectors {
            if !req_v.contains(&name.as_str()) && !opt_v.contains(&name.as_str()) {
                errs.push(format!("geometry.vectors.{name}: unknown vector for {}", self.kind));
            } else if let Err(e) = def.resolve(dim) {
                errs.push(format!("geometry.vectors.{name}: {e}"));
            }
        }
        let mut rho_names: Vec<&str> = req_rho.to_vec();
        if self.kind == ExperimentKind::LineSweep && geo.vectors.contains_key("test2") {
            rho_names.push("test2");
        }
        for name in &rho_names {
            match geo.rho.get(*name) {
                None => errs.push(format!("geometry.rho.{name}: required")),
                Some(r) if !(*r > 0.0 && r.is_finite()) => {
                    errs.push(format!("geometry.rho.{name}: must be positive"))
                }
                _ => {}
            }
        }
        for name in geo.rho.keys() {
            if !rho_names.contains(&name.as_str()) {
                errs.push(format!("geometry.rho.{name}: unknown SNR for {}", self.kind));
            }
        }
    }

    /// Resolved geometry vector; only valid after validation.
    pub fn vector(&self, name: &str) -> Result<Vec<f64>> {
        let dim = self
            .geometry
            .dim
            .ok_or_else(|| Error::Config(vec!["geometry.dim: required".into()]))?;
        let def = self
            .geometry
            .vectors
            .get(name)
            .ok_or_else(|| Error::Config(vec![format!("geometry.vectors.{name}: required")]))?;
        def.resolve(dim)
            .map_err(|e| Error::Config(vec![format!("geometry.vectors.{name}: {e}")]))
    }

    pub fn rho(&self, name: &str) -> Result<f64> {
        self.geometry
            .rho
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(vec![format!("geometry.rho.{name}: required")]))
    }

    pub fn trials(&self) -> u64 {
        self.trials.unwrap_or(0)
    }

    pub fn resolve_input(&self, input: &str) -> PathBuf {
        let p = Path::new(input);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}
