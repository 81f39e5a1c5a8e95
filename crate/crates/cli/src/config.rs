use std::fs;
use std::path::{Path, PathBuf};

use flownet_core::data::{GeometryKind, SplitSpec};
use flownet_core::flow::ModelConfig;
use flownet_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

fn default_geometry_kind() -> GeometryKind {
    GeometryKind::Coords
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Observation CSV; relative paths resolve against the config file.
    pub observations: PathBuf,
    pub geometry: PathBuf,
    #[serde(default = "default_geometry_kind")]
    pub geometry_kind: GeometryKind,
    #[serde(default)]
    pub split: SplitSpec,
    /// Input and output length; overrides `model.input_len` and `model.horizon`.
    #[serde(default)]
    pub horizon: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(h) = cfg.data.horizon {
            cfg.model.input_len = h;
            cfg.model.horizon = h;
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves its data paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Missing(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.observations, &mut cfg.data.geometry] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}
