use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featenc::EncodingMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub dropout_rate: f64,
    pub max_positions: usize,
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    #[serde(default)]
    pub encoding: EncodingMode,
}

impl TransformerConfig {
    /// Four encoder and four decoder layers, 4 heads, `d_model` 256,
    /// `d_ff` 1024, dropout 0.3.
    pub fn new(src_vocab_size: usize, tgt_vocab_size: usize) -> Self {
        TransformerConfig {
            num_layers: 4,
            num_heads: 4,
            d_model: 256,
            d_ff: 1024,
            dropout_rate: 0.3,
            max_positions: 1024,
            src_vocab_size,
            tgt_vocab_size,
            encoding: EncodingMode::FeatureInvariant,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("num_heads", self.num_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("max_positions", self.max_positions),
            ("src_vocab_size", self.src_vocab_size),
            ("tgt_vocab_size", self.tgt_vocab_size),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}
