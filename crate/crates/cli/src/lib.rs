//! Command-line front end for the `curved-nbody` library.
//!
//! A run is described by a flat JSON [`RunConfig`](config::RunConfig);
//! [`run::run`] dispatches it and returns the artifact bytes together with
//! any failure. Exit codes: 0 success, 1 internal, 2 configuration,
//! 3 singularity, 4 non-convergence or failed verification.

pub mod config;
pub mod export;
pub mod run;

pub use config::{
    parse_config, parse_config_with, Command, ConfigError, Format, Overrides, RunConfig,
};
pub use run::{run, Outcome, RunError};
