//! Orchestration for the color-mixing rig: configuration, the shared mix
//! pipeline, run history, evaluation harnesses and the HTTP API.

pub mod api;
pub mod config;
pub mod eval;
pub mod history;
pub mod pipeline;

pub use config::AppConfig;
pub use pipeline::{App, MixOptions, MixOutcome, PipelineError, RunRecord};
