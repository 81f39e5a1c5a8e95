//! Configuration, checkpoints, workflows and exports for the `flownet` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod export;
pub mod stamp;

pub use error::{CliError, Result};
