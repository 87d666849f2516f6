//! Configuration, persistence and experiment orchestration.

pub mod checkpoint;
pub mod config;
pub mod io;
pub mod pipeline;
pub mod scan;

pub use config::{ExperimentSpec, SpecFile, Stage};
pub use pipeline::{run_pipeline, CoolingRecord, OutputDir, PipelineInputs, PipelineOutput};
pub use scan::{run_scan, ScanRow};
