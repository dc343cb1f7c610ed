//! Batch front end for the constrained portfolio duality toolkit.
//!
//! The binary reads one experiment per config file and runs one of four
//! subcommands: `solve`, `verify`, `duality-gap`, `simulate`. This library
//! crate exposes the config schema and the runners so tests can drive them
//! in-process.

pub mod config;
pub mod runner;

pub use config::ExperimentConfig;
pub use runner::{run_duality_gap, run_simulate, run_solve, run_verify, with_threads, CliError};
