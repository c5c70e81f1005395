use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longest sequence the encoder accepts (documents are cut to their first
/// 128 tokens).
pub const MAX_SEQ_LEN_LIMIT: usize = 128;

/// How the per-group social vector reaches the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Injection {
    None,
    /// Adds a learned projection of the social vector to the position-0
    /// embedding.
    ZeroToken,
    /// Replaces encoder layer `layer` (1-based) by `channels` parallel copies
    /// mixed with softmax weights computed from the social vector.
    Sat {
        layer: usize,
        channels: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub ffn_size: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub social_dim: usize,
    pub injection: Injection,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_layers: 4,
            hidden_size: 128,
            num_heads: 4,
            ffn_size: 512,
            vocab_size: 2000,
            max_seq_len: 64,
            social_dim: 32,
            injection: Injection::None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::Config(m));
        if self.num_layers == 0 || self.hidden_size == 0 || self.num_heads == 0 {
            return bad(format!("empty model: {self:?}"));
        }
        if !self.hidden_size.is_multiple_of(self.num_heads) {
            return bad(format!(
                "hidden size {} not divisible by {} heads",
                self.hidden_size, self.num_heads
            ));
        }
        if self.max_seq_len == 0 || self.max_seq_len > MAX_SEQ_LEN_LIMIT {
            return bad(format!(
                "max_seq_len {} outside 1..={MAX_SEQ_LEN_LIMIT}",
                self.max_seq_len
            ));
        }
        if self.vocab_size < crate::train::vocab::NUM_SPECIAL + 1 {
            return bad(format!("vocabulary of {} is too small", self.vocab_size));
        }
        if self.injection != Injection::None && self.social_dim == 0 {
            return bad("social injection needs social_dim >= 1".into());
        }
        if let Injection::Sat { layer, channels } = self.injection {
            if layer == 0 || layer > self.num_layers {
                return bad(format!("SAT layer {layer} outside 1..={}", self.num_layers));
            }
            if channels == 0 {
                return bad("SAT needs at least one channel".into());
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }
}
