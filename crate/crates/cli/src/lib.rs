//! Library surface of the `impactlab` batch pipeline: configuration,
//! staged execution, and report-table rendering. The binary in
//! `main.rs` is a thin command-line wrapper over these modules.

pub mod config;
pub mod pipeline;
pub mod tables;

pub use config::PipelineConfig;
pub use pipeline::{run_pipeline, RunError, RunSummary};
