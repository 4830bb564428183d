use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub intermediate_size: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub rope_theta: f64,
    pub rms_eps: f64,
    /// P * P * C of the patch geometry the projection expects.
    pub patch_dim: usize,
    pub initializer_range: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// CPU-sized default: 4 layers, D = 128, 8 query / 4 key-value heads,
    /// intermediate width at the same 2.75 ratio as the large model.
    pub fn desk() -> Self {
        Self {
            hidden_size: 128,
            n_layers: 4,
            n_heads: 8,
            n_kv_heads: 4,
            intermediate_size: 352,
            vocab_size: 512,
            max_positions: 256,
            rope_theta: 10_000.0,
            rms_eps: 1e-5,
            patch_dim: 768,
            initializer_range: 0.02,
        }
    }

    /// The full-size configuration (24 layers, D = 1024, 32k vocabulary).
    pub fn large() -> Self {
        Self {
            hidden_size: 1024,
            n_layers: 24,
            n_heads: 16,
            n_kv_heads: 8,
            intermediate_size: 2816,
            vocab_size: 32_000,
            max_positions: 1024,
            ..Self::desk()
        }
    }

    /// Small enough for exhaustive finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            hidden_size: 16,
            n_layers: 2,
            n_heads: 4,
            n_kv_heads: 2,
            intermediate_size: 44,
            vocab_size: 16,
            max_positions: 32,
            patch_dim: 12,
            ..Self::desk()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.n_heads
    }

    pub fn q_dim(&self) -> usize {
        self.n_heads * self.head_dim()
    }

    pub fn kv_dim(&self) -> usize {
        self.n_kv_heads * self.head_dim()
    }

    /// Query heads sharing each key/value head.
    pub fn group_size(&self) -> usize {
        self.n_heads / self.n_kv_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.hidden_size == 0 || self.n_heads == 0 || self.n_kv_heads == 0 {
            return bad("hidden_size and head counts must be positive".into());
        }
        if !self.hidden_size.is_multiple_of(self.n_heads) {
            return bad(format!("hidden_size {} not divisible by n_heads {}", self.hidden_size, self.n_heads));
        }
        if !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return bad(format!("n_heads {} not divisible by n_kv_heads {}", self.n_heads, self.n_kv_heads));
        }
        if !self.head_dim().is_multiple_of(2) {
            return Err(Error::OddHeadDim(self.head_dim()));
        }
        if self.rms_eps <= 0.0 {
            return bad("rms_eps must be positive".into());
        }
        Ok(())
    }
}
