use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featenc::EncodingMode;
use crate::numerics::AdamConfig;
use crate::transformer::TransformerConfig;

/// Optimization recipe. Defaults: Adam with peak lr 0.001 and β2 0.98,
/// 4000 warmup steps, 20 000 updates of 400 examples, evaluation every 400
/// updates, label smoothing 0.1, dropout 0.3.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub eval_every: usize,
    pub batch_size: usize,
    pub label_smoothing: f64,
    pub adam_beta2: f64,
    pub dropout_rate: f64,
    pub seed: u64,
    pub encoder_mode: EncodingMode,
    /// Split each batch into chunks of this many examples and accumulate
    /// gradients; the update is the same as for the whole batch.
    pub micro_batch_size: Option<usize>,
    /// Sort examples by length inside groups of batches before batching.
    pub bucket_by_length: bool,
    /// Sources decoded together during dev evaluation.
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            peak_lr: 0.001,
            warmup_steps: 4000,
            total_steps: 20_000,
            eval_every: 400,
            batch_size: 400,
            label_smoothing: 0.1,
            adam_beta2: 0.98,
            dropout_rate: 0.3,
            seed: 1,
            encoder_mode: EncodingMode::FeatureInvariant,
            micro_batch_size: None,
            bucket_by_length: false,
            eval_batch_size: 128,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        if !self.total_steps.is_multiple_of(self.eval_every) {
            return Err(Error::Config(format!(
                "eval_every {} does not divide total_steps {}",
                self.eval_every, self.total_steps
            )));
        }
        if self.batch_size == 0 || self.micro_batch_size == Some(0) || self.eval_batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::Config(format!("peak_lr {} must be positive", self.peak_lr)));
        }
        if !(0.0..=1.0).contains(&self.label_smoothing) {
            return Err(Error::Config("label_smoothing outside [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("adam_beta2 outside [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("dropout_rate outside [0, 1)".into()));
        }
        Ok(())
    }

    /// Number of checkpoints (and dev evaluations) a full run produces.
    pub fn num_checkpoints(&self) -> usize {
        self.total_steps / self.eval_every
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta2: self.adam_beta2,
            ..AdamConfig::default()
        }
    }

    /// Copies the recipe's dropout rate and encoder mode into a model config.
    pub fn apply_to(&self, model: &mut TransformerConfig) {
        model.dropout_rate = self.dropout_rate;
        model.encoding = self.encoder_mode;
    }
}
