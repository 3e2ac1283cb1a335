//! Grapheme-to-phoneme pairs without features: read, train briefly, decode
//! and score with phoneme-level metrics.

use chartrans::data::{parse_pair_tsv, SymbolUnit};
use chartrans::decode::{evaluate, predict_examples, DecodeOptions};
use chartrans::featenc::EncodingMode;
use chartrans::training::{train, TrainConfig, TrainingData};
use chartrans::transformer::TransformerConfig;

const LEXICON: &str = "\
cat\tK AE T
bat\tB AE T
sat\tS AE T
mat\tM AE T
cab\tK AE B
tab\tT AE B
dab\tD AE B
bit\tB IH T
sit\tS IH T
kit\tK IH T
tip\tT IH P
dip\tD IH P
sip\tS IH P
bid\tB IH D
kid\tK IH D
cot\tK AA T
dot\tD AA T
tot\tT AA T
mop\tM AA P
top\tT AA P
";

fn main() -> chartrans::Result<()> {
    let all = parse_pair_tsv(LEXICON, "lexicon".as_ref(), SymbolUnit::Phonemes)?;
    let (train_set, dev) = all.split_at(16);
    let data = TrainingData::new(train_set.to_vec(), dev.to_vec())?;
    let mut arch = TransformerConfig::new(0, 0);
    arch.num_layers = 1;
    arch.d_model = 32;
    arch.d_ff = 64;
    arch.num_heads = 2;
    // no features, so both encodings number the characters the same way
    let recipe = TrainConfig {
        batch_size: 16,
        dropout_rate: 0.0,
        total_steps: 300,
        eval_every: 100,
        warmup_steps: 50,
        peak_lr: 0.005,
        encoder_mode: EncodingMode::Vanilla,
        ..Default::default()
    };
    let out = train(arch, &data, recipe, None)?;
    let model = out.best.model()?;
    let preds = predict_examples(&model, &data.src_vocab, &data.tgt_vocab, &data.dev, &DecodeOptions::default())?;
    for p in &preds {
        println!("{:<6} {:<10} {}", p.source, p.gold.join(" "), p.predicted.join(" "));
    }
    print!("{}", evaluate(&preds)?.to_key_values());
    Ok(())
}
