//! IO, file formats, experiment orchestration, and the `cgbc` CLI on top
//! of `cgbc-core`.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
mod error;
pub mod report;
pub mod run;
pub mod store;
pub mod synth;

pub use error::{AppError, AppResult};
