//! Semi-supervised classification with class-specific ranking losses and a
//! semantics-oriented feature contrast, built on a small reverse-mode autodiff
//! engine and an MLP backbone.

pub mod augment;
pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod model;
pub mod trainer;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use experiment::{run_experiment, run_sweep, RunOutcome, RunSummary, SweepSummary};
pub use model::ModelParams;
