//! Pipeline orchestration for `hubwind`: configuration, CSV ingestion, the
//! staged run from reanalysis downscaling to evaluation, synthetic data
//! generation and lattice export.

pub mod config;
pub mod export;
pub mod ingest;
pub mod output;
pub mod pipeline;
pub mod simulate;
pub mod stages;

pub use config::PipelineConfig;
pub use pipeline::{run_pipeline, run_stage, Stage, StageOutcome};
