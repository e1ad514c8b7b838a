//! Batch front end for the trilab experiments.

// Validation writes `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod run;

pub use config::{ConfigError, RunConfig, Subcommand, Surface, parse_config, parse_config_with_overrides};
pub use run::{Outcome, run};
