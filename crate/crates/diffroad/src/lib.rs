//! File formats, ingestion clients and the staged command-line pipeline
//! around `diffroad-core`.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod ingest;
pub mod pipeline;
pub mod report;
pub mod xodr_io;

pub use config::{PipelineConfig, Stage};
pub use error::{AppError, Result};
pub use pipeline::{run_pipeline, Logger, Pipeline};
