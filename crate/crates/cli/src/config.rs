//! The TOML run configuration. Every section is optional and falls back to
//! library defaults; unknown keys are rejected with their name.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use seqgraph::corpus::{DatasetFormat, SyntheticConfig};
use seqgraph::fusion::GnnConfig;
use seqgraph::net::{DecodeStrategy, ModelConfig, TaskConfig};
use seqgraph::seqcodec::VocabConfig;
use seqgraph::train::TrainConfig;

use crate::Invalid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    /// 1 decodes greedily.
    pub beam: usize,
    pub batch_size: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam: 1,
            batch_size: 16,
        }
    }
}

impl DecodeConfig {
    pub fn strategy(&self) -> DecodeStrategy {
        if self.beam <= 1 {
            DecodeStrategy::Greedy
        } else {
            DecodeStrategy::Beam(self.beam)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub format: DatasetFormat,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictions: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_predictions: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            format: DatasetFormat::Hotpot,
            train: None,
            dev: None,
            data: None,
            predictions: None,
            probe_predictions: None,
            checkpoint: None,
            out: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synthetic: SyntheticConfig,
    pub vocab: VocabConfig,
    pub task: TaskConfig,
    pub model: ModelConfig,
    pub gnn: GnnConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub paths: Paths,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    /// Defaults, overlaid with the file when one is given.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| Invalid(format!("config {}: {e}", path.display())))?;
        Self::from_toml(&text).with_context(|| format!("config {}", path.display()))
    }

    /// Writes the resolved configuration: `dir/run.toml` for a directory
    /// output, `<stem>.run.toml` beside a file output.
    pub fn write_beside(&self, out: &Path, is_dir: bool) -> anyhow::Result<PathBuf> {
        let path = if is_dir {
            out.join("run.toml")
        } else {
            let stem = out
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            out.with_file_name(format!("{stem}.run.toml"))
        };
        fs::write(&path, self.to_toml()).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
