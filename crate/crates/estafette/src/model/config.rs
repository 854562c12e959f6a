//! Model hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters of a (possibly multi-encoder) encoder-decoder transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of source encoders. Gate parameters exist iff this is ≥ 2.
    pub num_encoders: usize,
    pub layers: usize,
    pub heads: usize,
    /// Hidden size h; must be divisible by `heads`.
    pub hidden: usize,
    pub ff_size: usize,
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    pub dropout: f64,
    pub max_len: usize,
    /// Unidirectional self-attention in the encoders. Required for
    /// simultaneous decoding: prefix states must be stable as tokens stream in.
    pub causal_encoder: bool,
    /// One encoder parameter set reused for every source (requires a source
    /// vocabulary shared across sources).
    pub share_encoder_across_sources: bool,
}

impl ModelConfig {
    /// A small 2-layer setup; the starting point for desk-scale experiments.
    pub fn small(src_vocab_size: usize, tgt_vocab_size: usize) -> Self {
        ModelConfig {
            num_encoders: 1,
            layers: 2,
            heads: 4,
            hidden: 64,
            ff_size: 256,
            src_vocab_size,
            tgt_vocab_size,
            dropout: 0.1,
            max_len: 64,
            causal_encoder: true,
            share_encoder_across_sources: true,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// Distinct encoder parameter blocks: 1 when shared, else one per source.
    pub fn encoder_blocks(&self) -> usize {
        if self.share_encoder_across_sources {
            1
        } else {
            self.num_encoders
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_encoders == 0 {
            return Err(Error::config("num_encoders must be ≥ 1"));
        }
        if self.layers == 0 || self.heads == 0 || self.hidden == 0 || self.ff_size == 0 {
            return Err(Error::config("layers, heads, hidden and ff_size must be positive"));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::config(format!(
                "hidden size {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.src_vocab_size < 4 || self.tgt_vocab_size < 4 {
            return Err(Error::config("vocabularies must cover the 4 reserved ids"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        if self.max_len == 0 {
            return Err(Error::config("max_len must be positive"));
        }
        Ok(())
    }
}
