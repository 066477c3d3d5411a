//! Command-line pipeline from survey CSV to effect report.

pub mod config;
pub mod pipeline;

pub use config::{Method, PipelineConfig, Target};
pub use pipeline::{build_artifacts, run_pipeline, Report, RunOptions, StageError, SCHEMA_VERSION};
