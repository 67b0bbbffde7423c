//! Experiment harness over the pathint library: config parsing, sweep
//! execution and the verification-suite printer. The `pathint` binary
//! is a thin clap wrapper around these modules.

pub mod config;
pub mod experiment;
pub mod verify;
