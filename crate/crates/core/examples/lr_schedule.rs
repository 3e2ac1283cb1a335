//! Warmup then inverse-square-root decay, printed at a few steps.

use chartrans::training::{lr_schedule, TrainConfig};

fn main() {
    let recipe = TrainConfig::default();
    println!("peak {} after {} warmup steps", recipe.peak_lr, recipe.warmup_steps);
    for step in [1, 500, 1000, 2000, 4000, 8000, 16_000, 20_000] {
        let lr = lr_schedule(step, recipe.peak_lr, recipe.warmup_steps);
        let bar = "#".repeat((lr / recipe.peak_lr * 40.0).round() as usize);
        println!("{step:>6}  {lr:.7}  {bar}");
    }
}
