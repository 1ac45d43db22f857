use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub features: usize,
    pub window: usize,
    pub embed_dim: usize,
    pub datasets: usize,
    pub devices: usize,
    pub conv_channels: [usize; 3],
    pub se_reduction: usize,
    pub gru1_hidden: usize,
    pub gru1_layers: usize,
    pub gru2_hidden: usize,
    pub transformer_dim: usize,
    pub transformer_layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Temporal grid every path is pooled onto.
    pub grid: usize,
    pub h_hidden: usize,
    pub h_out: usize,
    pub raw_dim: usize,
    pub fusion_dim: usize,
    pub head_hidden: [usize; 2],
    pub decoder_hidden: usize,
    pub classes: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            features: 46,
            window: 32,
            embed_dim: 32,
            datasets: 5,
            devices: 6,
            conv_channels: [64, 128, 128],
            se_reduction: 8,
            gru1_hidden: 128,
            gru1_layers: 2,
            gru2_hidden: 64,
            transformer_dim: 128,
            transformer_layers: 2,
            heads: 8,
            ffn_dim: 512,
            grid: 8,
            h_hidden: 128,
            h_out: 64,
            raw_dim: 64,
            fusion_dim: 128,
            head_hidden: [256, 128],
            decoder_hidden: 64,
            classes: 2,
            dropout: 0.15,
        }
    }
}

impl ModelConfig {
    /// Width of the concatenated three-path grid, `2·gru1 + 2·gru2 + d_T`.
    pub fn t_merged(&self) -> usize {
        2 * self.gru1_hidden + 2 * self.gru2_hidden + self.transformer_dim
    }

    pub fn c_out(&self) -> usize {
        2 * self.embed_dim
    }

    pub fn fused_dim(&self) -> usize {
        3 * self.fusion_dim
    }

    pub fn classifier_in(&self) -> usize {
        self.fused_dim() + self.raw_dim
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.window < 4 || self.window % 4 != 0 {
            return bad(format!("window {} must be a positive multiple of 4 (two max-pool stages)", self.window));
        }
        for &c in &self.conv_channels {
            if c < self.se_reduction {
                return bad(format!("conv channels {c} below SE reduction {}", self.se_reduction));
            }
        }
        if self.transformer_dim % self.heads != 0 || self.t_merged() % self.heads != 0 {
            return bad(format!(
                "heads {} must divide d_T {} and d_T* {}",
                self.heads,
                self.transformer_dim,
                self.t_merged()
            ));
        }
        if self.grid == 0 || self.classes < 2 || self.gru1_layers == 0 || self.transformer_layers == 0 {
            return bad("grid, classes and layer counts must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub gamma: f64,
    pub label_smoothing: f64,
    pub aux_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { gamma: 2.0, label_smoothing: 0.05, aux_weight: 0.05 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !(0.0..1.0).contains(&self.label_smoothing) || !(self.aux_weight >= 0.0) {
            return Err(Error::InvalidArgument(format!("invalid loss config {self:?}")));
        }
        Ok(())
    }
}

/// Layer conventions that change the parameter inventory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conventions {
    /// Linear, attention projection and SE layers carry a bias.
    pub linear_bias: bool,
    /// Convolutions carry a bias. Every convolution here feeds a batch-norm,
    /// whose shift makes the bias redundant.
    pub conv_bias: bool,
    /// Batch-norm and layer-norm carry a scale and shift.
    pub norm_affine: bool,
    /// GRU keeps separate input and recurrent bias vectors.
    pub gru_double_bias: bool,
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions { linear_bias: true, conv_bias: false, norm_affine: true, gru_double_bias: true }
    }
}
