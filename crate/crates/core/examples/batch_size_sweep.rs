//! Trains the same small model with several batch sizes at a fixed update
//! budget and reports dev accuracy per size and encoding mode.

use chartrans::data::{gen_synthetic_inflection, permute_features, RuleTable, SyntheticConfig};
use chartrans::featenc::EncodingMode;
use chartrans::training::{sweep_batch_size, TrainConfig, TrainingData};
use chartrans::transformer::TransformerConfig;

fn main() -> chartrans::Result<()> {
    let splits = gen_synthetic_inflection(&SyntheticConfig::default(), &RuleTable::default())?;
    // reordered dev bundles separate the two encodings
    let dev = permute_features(&splits.dev, 1);
    let data = TrainingData::new(splits.train, dev)?;
    let mut arch = TransformerConfig::new(0, 0);
    arch.num_layers = 1;
    arch.d_model = 16;
    arch.d_ff = 64;
    arch.num_heads = 2;
    let base = TrainConfig {
        dropout_rate: 0.1,
        total_steps: 600,
        eval_every: 100,
        warmup_steps: 100,
        peak_lr: 0.003,
        ..Default::default()
    };
    let report = sweep_batch_size(
        &arch,
        &data,
        &base,
        &[20, 64, 128],
        &[EncodingMode::FeatureInvariant, EncodingMode::Vanilla],
        None,
        false,
    )?;
    print!("{report}");
    print!("{}", report.curve_tsv());
    Ok(())
}
