use serde::{Deserialize, Serialize};

use crate::entity::DEFAULT_E_MAX;
use crate::{Error, Result};

/// Architecture and objective hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub e_max: usize,
    /// Adds the global-relevance prior and its auxiliary loss.
    pub use_gr: bool,
    /// Weight of the relevance loss; only read when `use_gr` is set.
    pub beta: f64,
    pub dropout: f64,
    pub seed: u64,
    pub max_doc_len: usize,
    pub max_summary_len: usize,
    /// When false the entity block is removed from the output space and the
    /// gate output is pinned to 0 (the no-copy baseline).
    pub copy_enabled: bool,
    /// Probability-level mixing of the two softmaxes instead of
    /// scaling the raw logits. Off by default.
    pub mixture_mode: bool,
    /// Half-width of the uniform initialization interval.
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            n_heads: 2,
            n_enc_layers: 1,
            n_dec_layers: 1,
            d_ff: 64,
            vocab_size: 0,
            e_max: DEFAULT_E_MAX,
            use_gr: false,
            beta: 0.1,
            dropout: 0.0,
            seed: 1,
            max_doc_len: 128,
            max_summary_len: 32,
            copy_enabled: true,
            mixture_mode: false,
            init_scale: 0.08,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!(
                "d_model ({}) must be a positive multiple of n_heads ({})",
                self.d_model, self.n_heads
            ));
        }
        if self.d_ff == 0 {
            return fail("d_ff must be > 0".into());
        }
        if self.vocab_size < 4 {
            return fail(format!("vocab_size must be >= 4, got {}", self.vocab_size));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return fail(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.max_doc_len == 0 || self.max_summary_len < 2 {
            return fail("max_doc_len must be >= 1 and max_summary_len >= 2".into());
        }
        if !(self.init_scale > 0.0) {
            return fail("init_scale must be > 0".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn max_positions(&self) -> usize {
        self.max_doc_len.max(self.max_summary_len)
    }
}
