//! Experiment harness behind the `amalgam` binary: configuration, commands
//! and the files they write.

pub mod artifacts;
pub mod commands;
pub mod config;
