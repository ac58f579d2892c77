//! Run configuration: TOML file sections plus command-line overrides.

use std::path::Path;

use anyhow::{Context, Result};
use pse_core::dsp::StftConfig;
use pse_core::model::ModelDims;
use pse_core::prep::{LsaParams, SsParams};
use pse_core::simulator::SimSpec;
use pse_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

pub const SNAPSHOT_FILE: &str = "resolved_config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub emb_dim: usize,
    pub hidden: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelDims::default();
        Self { emb_dim: d.emb_dim, hidden: d.hidden }
    }
}

impl ModelSection {
    pub fn dims(&self, stft: &StftConfig) -> ModelDims {
        ModelDims::for_stft(stft, self.emb_dim, self.hidden)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub stft: StftConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub sim: SimSpec,
    pub ss: SsParams,
    pub lsa: LsaParams,
}

impl RunConfig {
    /// Defaults, overlaid with `path` when given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.stft.validate()?;
        Ok(cfg)
    }

    /// Writes the fully resolved settings into `out_dir`.
    pub fn write_snapshot(&self, out_dir: &Path) -> Result<()> {
        let text = toml::to_string(self).context("serialising resolved config")?;
        let path = out_dir.join(SNAPSHOT_FILE);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
