// SPDX-License-Identifier: MIT OR Apache-2.0

//! Named experiments: configuration, checkpoint cache, analysis stages, run
//! directories and SVG plots.

pub mod cache;
pub mod config;
pub mod plot;
pub mod run;
pub mod stages;

pub use cache::{cache_key, Cache, Trained, CACHE_ENV};
pub use config::{parse_flat, parse_override, AnalysisConfig, Experiment, ExperimentConfig};
pub use run::{run_experiment, RunManifest, RunOutcome, Stage};
