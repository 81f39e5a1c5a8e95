use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Provenance written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamp {
    pub command: String,
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub build: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn build_id() -> String {
    let base = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
    match option_env!("FLOWNET_BUILD_ID") {
        Some(extra) => format!("{base}+{extra}"),
        None => base.to_owned(),
    }
}

impl Stamp {
    pub fn new(command: &str, config_bytes: &[u8], seed: Option<u64>) -> Self {
        Self { command: command.to_owned(), config_sha256: sha256_hex(config_bytes), seed, build: build_id() }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}
