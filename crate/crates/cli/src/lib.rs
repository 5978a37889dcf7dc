//! Batch front end: `validate`, `solve`, `converge` and `oracle` driven by a
//! TOML run configuration.
//!
//! Exit codes: 0 pass, 1 numeric or acceptance failure, 2 configuration
//! error.

// Negated float comparisons are used on purpose so that NaN fails checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
pub mod config;

use std::fmt;

pub use commands::{run, substream, Command, Options, RunManifest};
pub use config::RunConfig;

#[derive(Debug, Clone, PartialEq)]
pub enum Failure {
    /// Bad or inconsistent configuration; exit code 2.
    Config(String),
    /// Numerical or I/O failure while running; exit code 1.
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for Failure {}
