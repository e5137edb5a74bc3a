//! Run reports: structured JSON on disk and a plain-text rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::table::fmt_g9;
use crate::trend::TrendFit;

pub const TOOLKIT_VERSION: &str = concat!("robustline ", env!("CARGO_PKG_VERSION"));

/// One tested inequality `value <= bound` (or its stated variant).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremCheck {
    pub name: String,
    pub theorem: String,
    pub inequality: String,
    pub value: f64,
    pub bound: f64,
    /// Distance to failure; negative when the check fails.
    pub margin: f64,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub detail: BTreeMap<String, f64>,
}

impl TheoremCheck {
    /// Passes when `value <= bound`.
    pub fn at_most(name: impl Into<String>, theorem: &str, inequality: impl Into<String>, value: f64, bound: f64) -> Self {
        let margin = bound - value;
        Self {
            name: name.into(),
            theorem: theorem.into(),
            inequality: inequality.into(),
            value,
            bound,
            margin,
            passed: margin >= 0.0,
            detail: BTreeMap::new(),
        }
    }

    /// Passes when `value > bound`.
    pub fn greater(name: impl Into<String>, theorem: &str, inequality: impl Into<String>, value: f64, bound: f64) -> Self {
        let margin = value - bound;
        Self {
            name: name.into(),
            theorem: theorem.into(),
            inequality: inequality.into(),
            value,
            bound,
            margin,
            passed: margin > 0.0,
            detail: BTreeMap::new(),
        }
    }

    /// A yes/no property; value and bound are 1/0 flags.
    pub fn holds(name: impl Into<String>, theorem: &str, property: impl Into<String>, ok: bool) -> Self {
        Self {
            name: name.into(),
            theorem: theorem.into(),
            inequality: property.into(),
            value: if ok { 1.0 } else { 0.0 },
            bound: 1.0,
            margin: if ok { 0.0 } else { -1.0 },
            passed: ok,
            detail: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, v: f64) -> Self {
        self.detail.insert(key.to_owned(), v);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedFit {
    pub name: String,
    pub fit: TrendFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRef {
    pub file: String,
    pub header: Vec<String>,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Counters {
    pub retries: u64,
    pub point_errors: u64,
}

/// Everything a run produced except wall-clock time, which is written to a
/// separate file so the report stays reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub toolkit_version: String,
    pub config: ExperimentConfig,
    pub results: Vec<TableRef>,
    pub fits: Vec<NamedFit>,
    pub checks: Vec<TheoremCheck>,
    pub counters: Counters,
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn new(config: ExperimentConfig) -> Self {
        Self {
            toolkit_version: TOOLKIT_VERSION.to_owned(),
            config,
            results: Vec::new(),
            fits: Vec::new(),
            checks: Vec::new(),
            counters: Counters::default(),
            errors: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("report: {e}")]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} | {} | seed {}", self.toolkit_version, self.config.kind, self.config.seed);
        for t in &self.results {
            let _ = writeln!(out, "results {} ({} rows)", t.file, t.rows);
        }
        for f in &self.fits {
            let _ = writeln!(
                out,
                "fit {} [{}]: slope {} intercept {} rms {} r2 {} points {} clamped {}",
                f.name,
                f.fit.mode,
                fmt_g9(f.fit.slope),
                fmt_g9(f.fit.intercept),
                fmt_g9(f.fit.rms_residual),
                fmt_g9(f.fit.r_squared),
                f.fit.n_points,
                f.fit.n_clamped
            );
        }
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{} {} ({}): {} | value {} bound {} margin {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.theorem,
                c.inequality,
                fmt_g9(c.value),
                fmt_g9(c.bound),
                fmt_g9(c.margin)
            );
            for (k, v) in &c.detail {
                let _ = writeln!(out, "    {k} = {}", fmt_g9(*v));
            }
        }
        let _ = writeln!(
            out,
            "retries {} point_errors {}",
            self.counters.retries, self.counters.point_errors
        );
        for e in &self.errors {
            let _ = writeln!(out, "error: {e}");
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        let passed = self.checks.iter().filter(|c| c.passed).count();
        let _ = writeln!(out, "{passed}/{} checks passed", self.checks.len());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_constructors() {
        assert!(TheoremCheck::at_most("a", "t", "x <= 1", 1.0, 1.0).passed);
        assert!(!TheoremCheck::at_most("a", "t", "x <= 1", 1.5, 1.0).passed);
        assert!(!TheoremCheck::greater("a", "t", "x > 1", 1.0, 1.0).passed);
        let c = TheoremCheck::greater("a", "t", "x > 1", 3.0, 1.0);
        assert_eq!(c.margin, 2.0);
        assert!(!TheoremCheck::holds("a", "t", "p", false).passed);
    }
}
