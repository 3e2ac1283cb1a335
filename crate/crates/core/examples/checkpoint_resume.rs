//! Interrupts a run, reloads it from disk and checks that it ends in the same
//! state as a run that was never stopped.

use chartrans::data::{gen_synthetic_inflection, RuleTable, SyntheticConfig};
use chartrans::training::{load_checkpoint, save_checkpoint, train, TrainConfig, Trainer, TrainingData};
use chartrans::transformer::TransformerConfig;

fn main() -> chartrans::Result<()> {
    let cfg = SyntheticConfig { num_examples: 400, alphabet_size: 8, min_len: 3, max_len: 5, ..Default::default() };
    let splits = gen_synthetic_inflection(&cfg, &RuleTable::default())?;
    let data = TrainingData::new(splits.train, splits.dev)?;
    let mut arch = TransformerConfig::new(0, 0);
    arch.num_layers = 1;
    arch.d_model = 16;
    arch.d_ff = 32;
    arch.num_heads = 2;
    let recipe = TrainConfig {
        batch_size: 32,
        dropout_rate: 0.1,
        total_steps: 400,
        eval_every: 100,
        warmup_steps: 50,
        peak_lr: 0.003,
        ..Default::default()
    };

    let dir = std::env::temp_dir().join(format!("chartrans-resume-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let unbroken = train(arch.clone(), &data, recipe.clone(), None)?;

    let mut first = Trainer::from_examples(arch, recipe, &data)?.with_checkpoint_dir(&dir)?;
    first.run_until(250)?;
    let path = dir.join("interrupted.ckpt");
    save_checkpoint(&first.checkpoint(), &path)?;
    drop(first);
    println!("stopped at step 250, saved {} bytes", std::fs::metadata(&path)?.len());

    let ck = load_checkpoint(&path)?;
    let resumed = Trainer::resume(ck, data.train.clone(), data.dev.clone(), Some(&dir))?.run()?;
    for r in &resumed.history {
        println!("step {:>4}  dev acc {:.4}", r.step, r.dev_acc);
    }
    println!("final parameters identical: {}", resumed.last.params.same_values(&unbroken.last.params));
    println!("same best step: {}", resumed.best.step == unbroken.best.step);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
