//! Experiment plumbing: configuration, synthetic data, checkpoints,
//! the end-to-end pipeline and metric exports.

pub mod checkpoint;
pub mod config;
pub mod pipeline;
pub mod report;
pub mod synth;

pub use config::{DataSource, ExperimentConfig};
pub use pipeline::{evaluate_run, run_pipeline, PipelineRun};
pub use synth::{generate_synthetic, write_synthetic, SyntheticDriftSpec};
