//! Service shell for smartline: configuration, the ingest/detect/assess
//! pipeline, the HTTP and event-stream API, and the command-line tools.

pub mod api;
pub mod cli;
pub mod config;
pub mod models;
pub mod pipeline;
pub mod service;

pub use config::ServiceConfig;
pub use pipeline::{Pipeline, PipelineOptions};
pub use service::{serve, ServiceHandle};
