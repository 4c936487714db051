//! Configuration-driven front end for the active-search library.

pub mod commands;
pub mod config;
pub mod svg;

pub use config::{ExperimentConfig, OUT_DIR_ENV};
