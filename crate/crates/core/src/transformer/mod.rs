//! Pre-LN encoder-decoder transformer.

mod config;
mod forward;
mod inference;
mod layout;

pub use config::TransformerConfig;
pub use forward::ForwardOptions;
pub use inference::{encode_sources, DecoderState, EncoderMemory};
pub use layout::{count_parameters, ParamIds, ParameterCounts, Scope};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::ParamStore;

/// `PE(p)[2i] = sin(p / 10000^(2i/d))`, `PE(p)[2i+1] = cos(p / 10000^(2i/d))`.
pub fn sinusoidal_pe(position: usize, d_model: usize) -> Vec<f64> {
    (0..d_model)
        .map(|j| {
            let i2 = (j - j % 2) as f64;
            let angle = position as f64 / 10000f64.powf(i2 / d_model as f64);
            if j % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

/// Precomputed sinusoidal rows for positions `0..max_positions`.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionTable {
    d_model: usize,
    values: Vec<f64>,
}

impl PositionTable {
    pub fn new(max_positions: usize, d_model: usize) -> Self {
        let values = (0..max_positions)
            .flat_map(|p| sinusoidal_pe(p, d_model))
            .collect();
        PositionTable { d_model, values }
    }

    pub fn row(&self, position: usize) -> &[f64] {
        &self.values[position * self.d_model..(position + 1) * self.d_model]
    }
}

/// Configuration plus parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: TransformerConfig,
    pub params: ParamStore,
    pub ids: ParamIds,
    pub positions: PositionTable,
}

impl Model {
    /// Freshly initialized model (Xavier-uniform weights, zero biases, unit
    /// layer-norm gains).
    pub fn new(config: TransformerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (params, ids) = layout::init_params(&config, &mut rng)?;
        Ok(Model {
            positions: PositionTable::new(config.max_positions, config.d_model),
            config,
            params,
            ids,
        })
    }

    /// Wraps existing parameters, checking names and shapes against `config`.
    pub fn from_params(config: TransformerConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let ids = layout::resolve_ids(&config, &params)?;
        Ok(Model {
            positions: PositionTable::new(config.max_positions, config.d_model),
            config,
            params,
            ids,
        })
    }
}
