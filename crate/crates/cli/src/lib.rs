//! Harness for the kinetic limit laboratory: configuration, seeded
//! ensembles, the estimate/graphs/boltzmann/compare pipeline, diameter
//! sweeps and the `kinlab` command line.

pub mod cli;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod io;
pub mod manifest;
pub mod plot;
pub mod stages;
pub mod sweep;

pub use config::ExperimentConfig;
pub use ensemble::{load_ensemble, run_ensemble, Ensemble};
pub use error::{CliError, CliResult};
pub use manifest::RunManifest;
pub use sweep::{convergence_study, StudyReport};
