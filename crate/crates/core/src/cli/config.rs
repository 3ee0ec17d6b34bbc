use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{read_json, SyntheticConfig};
use crate::eval::EvalConfig;
use crate::model::EncoderConfig;
use crate::train::TrainConfig;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

fn default_min_count() -> usize {
    5
}

/// Full run configuration. `schema_version` is required; every other
/// section falls back to its defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
    /// Minimum interactions per user and per item after filtering.
    #[serde(default = "default_min_count")]
    pub min_count: usize,
    #[serde(default)]
    pub data_in: Option<PathBuf>,
    #[serde(default)]
    pub workdir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            synthetic: SyntheticConfig::default(),
            min_count: default_min_count(),
            data_in: None,
            workdir: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: RunConfig = read_json(path).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every section before any work starts.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let config = |e: &dyn std::fmt::Display| Error::Config(e.to_string());
        self.encoder.validate().map_err(|e| config(&e))?;
        self.train.validate().map_err(|e| config(&e))?;
        self.eval.validate().map_err(|e| config(&e))?;
        self.synthetic.validate().map_err(|e| config(&e))?;
        if self.min_count < 1 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        Ok(())
    }
}
