//! Std companion of `gml-core`: dataset files, ledger and history CSV,
//! experiment configuration, a rayon-backed dispatcher, report rendering and
//! the `gml` command-line driver.

pub mod artifacts;
pub mod config;
pub mod dataset_io;
pub mod experiment;
pub mod exports;
pub mod parallel;
pub mod report;

pub use config::ExperimentConfig;
pub use parallel::Rayon;
