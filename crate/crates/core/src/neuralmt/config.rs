use serde::{Deserialize, Serialize};

use super::MtError;

/// Total number of convolution filters of the reference architecture.
pub const REFERENCE_FILTER_TOTAL: usize = 688;

/// Hyperparameters of the character-level translator and its trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub conv_filter_counts: Vec<usize>,
    pub conv_filter_widths: Vec<usize>,
    /// Width of the successive max-pooling windows.
    pub pool_interval: usize,
    pub highway_layers: usize,
    /// Hidden size of each encoder direction.
    pub encoder_hidden: usize,
    pub decoder_layers: usize,
    pub decoder_hidden: usize,
    pub attention_dim: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub min_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip applied per mini-batch; `None` disables it.
    pub grad_clip_norm: Option<f64>,
    pub max_epochs: usize,
    pub max_decode_factor: usize,
    pub max_decode_slack: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 256,
            conv_filter_counts: vec![16, 32, 64, 64, 128, 128, 256],
            conv_filter_widths: vec![1, 2, 3, 4, 5, 6, 7],
            pool_interval: 5,
            highway_layers: 2,
            encoder_hidden: 256,
            decoder_layers: 2,
            decoder_hidden: 512,
            attention_dim: 512,
            batch_size: 32,
            initial_lr: 1e-3,
            min_lr: 1e-6,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip_norm: Some(5.0),
            max_epochs: 50,
            max_decode_factor: 4,
            max_decode_slack: 10,
            seed: 1,
        }
    }
}

impl ModelConfig {
    /// Same convolution, pooling and highway stack as the default, with small
    /// embedding and recurrent sizes for desk-scale experiments.
    pub fn toy() -> Self {
        Self {
            embed_dim: 32,
            encoder_hidden: 64,
            decoder_hidden: 128,
            attention_dim: 64,
            ..Self::default()
        }
    }

    /// Width of the per-position convolution output.
    pub fn conv_output_dim(&self) -> usize {
        self.conv_filter_counts.iter().sum()
    }

    pub fn encoder_state_dim(&self) -> usize {
        2 * self.encoder_hidden
    }

    /// Longest output `decode_greedy` may produce for a source of `source_len`
    /// characters.
    pub fn decode_cap(&self, source_len: usize) -> usize {
        self.max_decode_factor * source_len + self.max_decode_slack
    }

    pub fn validate(&self) -> Result<(), MtError> {
        let bad = |msg: String| Err(MtError::InvalidConfig(msg));
        if self.conv_filter_counts.len() != self.conv_filter_widths.len() {
            return bad("conv_filter_counts and conv_filter_widths differ in length".into());
        }
        if self.conv_output_dim() != REFERENCE_FILTER_TOTAL {
            return bad(format!(
                "convolution filters must total {REFERENCE_FILTER_TOTAL}, got {}",
                self.conv_output_dim()
            ));
        }
        let dims = [
            ("embed_dim", self.embed_dim),
            ("pool_interval", self.pool_interval),
            ("encoder_hidden", self.encoder_hidden),
            ("decoder_layers", self.decoder_layers),
            ("decoder_hidden", self.decoder_hidden),
            ("attention_dim", self.attention_dim),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in dims {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.conv_filter_counts.iter().chain(&self.conv_filter_widths).any(|&v| v == 0) {
            return bad("filter counts and widths must be positive".into());
        }
        if !(self.initial_lr > 0.0 && self.min_lr >= 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_eps <= 0.0 {
            return bad("invalid Adam hyperparameters".into());
        }
        if self.grad_clip_norm.is_some_and(|c| c <= 0.0) {
            return bad("grad_clip_norm must be positive".into());
        }
        Ok(())
    }
}
