// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Shape of the toy decoder-only transformer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    pub head_dim: usize,
    pub mlp_dim: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub rng_seed: u64,
}

impl ModelConfig {
    /// Checks `d = H * d_h` and that every dimension is positive.
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("model_dim", self.model_dim),
            ("head_dim", self.head_dim),
            ("mlp_dim", self.mlp_dim),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(LabError::Config(format!("{name} must be >= 1")));
            }
        }
        if self.model_dim != self.num_heads * self.head_dim {
            return Err(LabError::Config(format!(
                "model_dim {} != num_heads {} * head_dim {}",
                self.model_dim, self.num_heads, self.head_dim
            )));
        }
        Ok(())
    }

    /// Total number of attention heads.
    pub fn total_heads(&self) -> usize {
        self.num_layers * self.num_heads
    }

    /// Attention logit scale, `1 / sqrt(d_h)`.
    pub fn attn_scale(&self) -> f64 {
        1.0 / (self.head_dim as f64).sqrt()
    }
}
