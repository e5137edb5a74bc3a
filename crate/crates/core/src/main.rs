use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use robustline::harness::config::{ExperimentConfig, ExperimentKind, IngestParams, SCHEMA_VERSION};
use robustline::harness::{resolve_out_dir, run_experiment, RunReport};
use robustline::trend::FitMode;
use robustline::Error;

/// Probit-space accuracy trends for linear classifiers under distribution shift.
#[derive(Parser)]
#[command(name = "robustline", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; takes precedence over ROBUSTLINE_OUT_DIR and the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads. Output bytes do not depend on this.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Treat warnings and per-point errors as failures.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Sample trained-model families and fit the probit trend.
    Simulate,
    /// Sweep mixing ratios between two sources.
    MixSweep,
    /// Compare ensembles of per-source models with union training.
    EnsembleCheck,
    /// Filter training data with a pretrained model and compare slopes.
    FilterExp,
    /// Measure residuals from the theoretical line across dimensions.
    ResidualScan,
    /// Fit probit trends to an accuracy table.
    Fit {
        /// Accuracy CSV; used instead of a config.
        #[arg(long, conflicts_with = "config")]
        input: Option<PathBuf>,
        /// Row filter such as `shift_name=sketch,meta_arch=vit`.
        #[arg(long, default_value = "")]
        filter: String,
        #[arg(long, value_parser = ["free", "through_origin"], default_value = "free")]
        mode: String,
        #[arg(long)]
        exclude_clamped: bool,
    },
    /// Render a saved report (file or run directory) as text.
    Report { path: PathBuf },
}

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_ERROR: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.common.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(EXIT_ERROR);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_ERROR);
        }
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    let common = cli.common;
    let kind = match &cli.command {
        Command::Simulate => ExperimentKind::LineSweep,
        Command::MixSweep => ExperimentKind::MixSweep,
        Command::EnsembleCheck => ExperimentKind::EnsembleCheck,
        Command::FilterExp => ExperimentKind::FilterExperiment,
        Command::ResidualScan => ExperimentKind::ResidualScaling,
        Command::Fit { .. } => ExperimentKind::IngestFit,
        Command::Report { path } => return render(path),
    };

    let mut cfg = match (&cli.command, &common.config) {
        (Command::Fit { input: Some(input), filter, mode, exclude_clamped }, _) => {
            ad_hoc_fit(input, filter, mode, *exclude_clamped)
        }
        (_, Some(path)) => ExperimentConfig::load(path)?,
        (_, None) => return Err(Error::Config(vec!["--config is required".into()])),
    };
    if cfg.kind != kind {
        return Err(Error::Config(vec![format!(
            "config kind {} does not match this subcommand (expects {kind})",
            cfg.kind
        )]));
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out_dir = resolve_out_dir(&cfg, common.out.as_deref());
    let report = run_experiment(&cfg, &out_dir)?;
    print!("{}", report.render_text());
    eprintln!("wrote {}", out_dir.display());

    if common.strict && !(report.warnings.is_empty() && report.errors.is_empty()) {
        eprintln!(
            "error: --strict: {} warnings, {} point errors",
            report.warnings.len(),
            report.errors.len()
        );
        return Ok(ExitCode::from(EXIT_ERROR));
    }
    Ok(exit_for(&report))
}

fn ad_hoc_fit(input: &Path, filter: &str, mode: &str, exclude_clamped: bool) -> ExperimentConfig {
    let mode = if mode == "free" { FitMode::Free } else { FitMode::ThroughOrigin };
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        kind: ExperimentKind::IngestFit,
        seed: 0,
        trials: None,
        output: "robustline-out".into(),
        geometry: Default::default(),
        grids: Default::default(),
        line_sweep: None,
        mix_sweep: None,
        ensemble_check: None,
        filter_experiment: None,
        residual_scaling: None,
        ingest_fit: Some(IngestParams {
            input: input.display().to_string(),
            filter: filter.to_owned(),
            mode,
            exclude_clamped,
        }),
        base_dir: PathBuf::new(),
    }
}

fn render(path: &Path) -> Result<ExitCode, Error> {
    let file = if path.is_dir() { path.join("report.json") } else { path.to_path_buf() };
    let report = RunReport::load(&file)?;
    print!("{}", report.render_text());
    Ok(exit_for(&report))
}

fn exit_for(report: &RunReport) -> ExitCode {
    if report.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_CHECK_FAILED)
    }
}
