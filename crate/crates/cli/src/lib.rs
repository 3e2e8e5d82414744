//! Reproducible experiment runner for the cooperative-decay library.
//!
//! Every invocation produces a bundle of plain-text files plus a manifest of
//! SHA-256 hashes, seeds and status. Given the same config and build, a bundle
//! is regenerated byte for byte, which `verify --rerun` checks.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod presets;
pub mod run;
pub mod scan;
pub mod sweep;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("verification mismatch: {0}")]
    Verification(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// Process exit code: 2 config, 3 solver, 4 verification, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Verification(_) => 4,
        }
    }
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/runner.md")]
mod book_runner {}
