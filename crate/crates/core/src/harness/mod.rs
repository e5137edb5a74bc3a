//! Configuration, ingestion, result files and experiment execution.

pub mod config;
pub mod ingest;
pub mod report;
pub mod run;
pub mod table;

pub use config::{ExperimentConfig, ExperimentKind};
pub use ingest::{ingest_accuracies, Ingested, RowError};
pub use report::{RunReport, TheoremCheck};
pub use run::{execute, resolve_out_dir, run_experiment, RunOutput, OUT_DIR_ENV};
pub use table::{emit_csv, fmt_g9, Table};
