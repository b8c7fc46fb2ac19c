//! Command-line front end: flat `key=value` run configurations, study
//! drivers and output writers.

pub mod config;
pub mod run;

pub use config::{
    parse_config, render, Bounds, Command, ConfigError, Domain, Format, ProblemSource, RunConfig,
};
pub use run::{resolve_spec, run, RunError, RunOutput};
