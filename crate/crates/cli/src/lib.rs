//! Configuration loading and the experiment pipeline behind the `mdpc`
//! binary.

pub mod config;
pub mod runner;

pub use config::{load_config, parse_config, ConfigError, ExperimentConfig};
pub use runner::{build_experiment, execute, run_experiment, run_riccati, run_sweep};
