//! Datasets on disk, checkpoints, experiment drivers and the `flat` command
//! line, on top of `flat-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod fla;
pub mod json;
pub mod report;

pub use error::{Error, Result};
