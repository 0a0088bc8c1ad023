//! Experiment configs, file formats and subcommand implementations backing
//! the `policyopt` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;
