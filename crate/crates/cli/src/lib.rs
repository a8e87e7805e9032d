//! Experiment harness for the gradient-flow laboratory: configuration,
//! synthetic data, deterministic CSV/JSON emission, and the CLI commands.

pub mod commands;
pub mod config;
pub mod data;
pub mod emit;
pub mod runs;
