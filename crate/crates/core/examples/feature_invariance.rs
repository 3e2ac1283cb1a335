//! Reorders feature bundles and compares greedy outputs of an untrained
//! model under both source encodings.

use chartrans::data::{gen_synthetic_inflection, permute_features, RuleTable, SyntheticConfig};
use chartrans::decode::{greedy_decode, DecodeOptions};
use chartrans::featenc::{EncodingMode, SourceEncoder};
use chartrans::training::{TrainConfig, TrainingData};
use chartrans::transformer::{Model, TransformerConfig};

fn main() -> chartrans::Result<()> {
    let splits = gen_synthetic_inflection(&SyntheticConfig::default(), &RuleTable::default())?;
    let data = TrainingData::new(splits.train, splits.dev)?;
    let examples = &data.dev[..50];
    let shuffled = permute_features(examples, 1);
    println!("{}  ->  {}", examples[0].features.join(";"), shuffled[0].features.join(";"));

    for mode in [EncodingMode::FeatureInvariant, EncodingMode::Vanilla] {
        let mut arch = TransformerConfig::new(0, 0);
        arch.num_layers = 2;
        arch.d_model = 64;
        arch.d_ff = 256;
        let recipe = TrainConfig { encoder_mode: mode, ..Default::default() };
        let model = Model::new(data.model_config(arch, &recipe), 3)?;
        let encoder = SourceEncoder::new(mode);
        let encode = |exs: &[chartrans::data::Example]| {
            exs.iter()
                .map(|e| encoder.encode(&e.features, &e.source, &data.src_vocab))
                .collect::<chartrans::Result<Vec<_>>>()
        };
        let opts = DecodeOptions { keep_logits: true, ..Default::default() };
        let a = greedy_decode(&model, &encode(examples)?, &opts)?;
        let b = greedy_decode(&model, &encode(&shuffled)?, &opts)?;
        let mut gap: f64 = 0.0;
        let mut changed = 0;
        for (x, y) in a.iter().zip(&b) {
            if x.symbols != y.symbols || x.logits.len() != y.logits.len() {
                changed += 1;
                continue;
            }
            for (r, s) in x.logits.iter().zip(&y.logits) {
                gap = r.iter().zip(s).map(|(p, q)| (p - q).abs()).fold(gap, f64::max);
            }
        }
        println!("{mode:<18} outputs changed {changed}/{}  max logit gap {gap:.1e}", examples.len());
    }
    Ok(())
}
