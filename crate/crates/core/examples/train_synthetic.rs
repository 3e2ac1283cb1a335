//! Trains a small feature-invariant model on generated inflection data and
//! prints the dev curve and a few test predictions.
//!
//! `cargo run --release --example train_synthetic -- [steps]`

use chartrans::data::{gen_synthetic_inflection, RuleTable, SyntheticConfig};
use chartrans::decode::{evaluate, predict_examples, DecodeOptions};
use chartrans::training::{TrainConfig, Trainer, TrainingData};
use chartrans::transformer::TransformerConfig;

fn main() -> chartrans::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let rules = RuleTable::default();
    print!("rules:\n{rules}");
    let splits = gen_synthetic_inflection(&SyntheticConfig::default(), &rules)?;
    let test = splits.test.clone();
    let data = TrainingData::new(splits.train, splits.dev)?;

    let mut arch = TransformerConfig::new(0, 0);
    arch.num_layers = 2;
    arch.d_model = 64;
    arch.d_ff = 256;
    let recipe = TrainConfig {
        batch_size: 128,
        dropout_rate: 0.1,
        total_steps: steps.div_ceil(100) * 100,
        eval_every: 100,
        warmup_steps: 400,
        peak_lr: 0.002,
        ..Default::default()
    };
    let outcome = Trainer::from_examples(arch, recipe, &data)?
        .on_eval(|r| println!("step {:>5}  dev acc {:.4}  loss {:.4}  lr {:.6}", r.step, r.dev_acc, r.train_loss, r.lr))
        .run()?;
    println!("best checkpoint: step {}", outcome.best.step);

    let model = outcome.best.model()?;
    let preds = predict_examples(&model, &data.src_vocab, &data.tgt_vocab, &test, &DecodeOptions::default())?;
    for p in preds.iter().take(8) {
        let mark = if p.correct() { ' ' } else { '*' };
        println!("{mark} {:<28} {:<14} {}", p.source, p.gold.concat(), p.predicted.concat());
    }
    print!("test:\n{}", evaluate(&preds)?);
    Ok(())
}
