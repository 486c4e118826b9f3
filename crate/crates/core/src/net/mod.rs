//! Encoder-decoder transformer whose encoder is split at the fusion layer,
//! fusion-in-decoder concatenation over passages, and greedy/beam decoding.

mod batch;
mod checkpoint;
mod generate;
mod model;

use serde::{Deserialize, Serialize};

use crate::fusion::GnnConfig;
use crate::seqcodec::{CodecError, PathVariant};

pub use batch::{prepare_example, target_text, DecoderBatch, EncoderBatch, Example};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use generate::{DecodeStrategy, Memory};
pub use model::{HiddenBlock, Seq2Seq};

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("token id {id} outside vocabulary of {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
}

/// Which output the model learns and whether graph fusion runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Answer only, no fusion.
    Fid,
    /// Reasoning path, no fusion.
    PathFid,
    /// Reasoning path with graph fusion.
    SeqGraph,
}

impl Mode {
    pub fn uses_graph(self) -> bool {
        self == Mode::SeqGraph
    }

    pub fn emits_path(self) -> bool {
        self != Mode::Fid
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fid" => Ok(Mode::Fid),
            "pathfid" => Ok(Mode::PathFid),
            "seqgraph" => Ok(Mode::SeqGraph),
            other => Err(format!("unknown mode {other:?} (fid, pathfid, seqgraph)")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Fid => "fid",
            Mode::PathFid => "pathfid",
            Mode::SeqGraph => "seqgraph",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    /// Encoder depth M.
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    /// Encoder layers run before fusion (L); `0 <= L < M`.
    pub fusion_layer: usize,
    pub dropout: f64,
    /// Filled from the vocabulary when zero.
    pub vocab_size: usize,
    /// Longest encoder input per passage.
    pub max_positions: usize,
    /// Longest decoder sequence, including the begin token.
    pub max_target_positions: usize,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            enc_layers: 4,
            dec_layers: 4,
            heads: 4,
            d_ff: 256,
            fusion_layer: 2,
            dropout: 0.1,
            vocab_size: 0,
            max_positions: 256,
            max_target_positions: 96,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    // negated comparisons so that NaN fails them
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn check(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::Config(m));
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            ));
        }
        if self.enc_layers == 0 || self.dec_layers == 0 {
            return bad("enc_layers and dec_layers must be at least 1".into());
        }
        if self.fusion_layer >= self.enc_layers {
            return bad(format!(
                "fusion_layer {} must be below enc_layers {}",
                self.fusion_layer, self.enc_layers
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.vocab_size == 0 {
            return bad("vocab_size is zero".into());
        }
        if self.max_positions == 0 || self.max_target_positions < 2 {
            return bad("max_positions must be positive and max_target_positions at least 2".into());
        }
        if self.d_ff == 0 || !(self.init_std > 0.0) {
            return bad("d_ff and init_std must be positive".into());
        }
        Ok(())
    }
}

/// How instances become model inputs and targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub mode: Mode,
    pub variant: PathVariant,
    /// Encoder tokens per passage.
    pub max_len: usize,
    /// Generated tokens, end token included.
    pub max_out_len: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            mode: Mode::SeqGraph,
            variant: PathVariant::Hotpot,
            max_len: 256,
            max_out_len: 64,
        }
    }
}

/// Everything needed to rebuild a model: architecture, fusion and task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model: ModelConfig,
    pub gnn: GnnConfig,
    pub task: TaskConfig,
}
