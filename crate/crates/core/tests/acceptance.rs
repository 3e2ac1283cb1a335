//! End-to-end acceptance run. Prints one `PASS`/`FAIL` line per criterion
//! and exits non-zero when a hard criterion fails. Criteria can be selected by
//! number: `cargo test --release --test acceptance -- 1 4 10`.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use chartrans::data::{
    gen_synthetic_inflection, permute_features, split_chars, Example, LemmaShape, RuleTable, SyntheticConfig,
};
use chartrans::decode::{
    edit_distance, error_length_histogram, evaluate, greedy_decode, Decoded, DecodeOptions, LengthBin, Prediction,
};
use chartrans::featenc::{EncodingMode, SourceEncoder};
use chartrans::training::{
    load_checkpoint, lr_schedule, save_checkpoint, sweep_batch_size, train, TrainConfig, Trainer, TrainingData,
};
use chartrans::transformer::{count_parameters, Model, TransformerConfig};
use common::*;
use rand::Rng;

struct Outcome {
    pass: bool,
    /// Soft criteria report without failing the run.
    soft: bool,
    detail: String,
}

impl Outcome {
    fn hard(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, soft: false, detail: detail.into() }
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn synthetic(cfg: SyntheticConfig) -> TrainingData {
    let splits = gen_synthetic_inflection(&cfg, &RuleTable::default()).unwrap();
    TrainingData::new(splits.train, splits.dev).unwrap()
}

fn parameter_count() -> Outcome {
    let t0 = Instant::now();
    let model = Model::new(TransformerConfig::new(40, 30), 0).unwrap();
    let counts = count_parameters(&model.params);
    let elapsed = t0.elapsed();
    Outcome::hard(
        counts.layer_stack == 7_372_800 && elapsed < Duration::from_secs(1),
        format!("layer stack {} parameters in {}", counts.layer_stack, secs(elapsed)),
    )
}

fn gradient_check() -> Outcome {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for mode in [EncodingMode::FeatureInvariant, EncodingMode::Vanilla] {
        let (model, batch) = tiny_setup(mode);
        let (err, n) = check_params(&model.params, |g| model.loss(g, &batch, 0.1).unwrap());
        worst = worst.max(err);
        checked += n;
    }
    let elapsed = t0.elapsed();
    Outcome::hard(
        worst < 1e-4 && elapsed < Duration::from_secs(60),
        format!("max relative error {worst:.2e} over {checked} values in {}", secs(elapsed)),
    )
}

/// Greedy outputs and per-step logits for each example, with and without a
/// shuffled feature bundle. Returns how many examples disagree.
fn permutation_mismatches(model: &Model, data: &TrainingData, examples: &[Example]) -> (usize, f64) {
    let encoder = SourceEncoder::new(model.config.encoding);
    let encode = |exs: &[Example]| -> Vec<_> {
        exs.iter()
            .map(|e| encoder.encode(&e.features, &e.source, &data.src_vocab).unwrap())
            .collect()
    };
    let opts = DecodeOptions { keep_logits: true, ..Default::default() };
    let a = greedy_decode(model, &encode(examples), &opts).unwrap();
    let b = greedy_decode(model, &encode(&permute_features(examples, 99)), &opts).unwrap();
    let mut mismatches = 0;
    let mut worst: f64 = 0.0;
    for (x, y) in a.iter().zip(&b) {
        let diff = logit_gap(x, y);
        worst = worst.max(diff);
        if x.symbols != y.symbols || diff > 1e-9 {
            mismatches += 1;
        }
    }
    (mismatches, worst)
}

fn logit_gap(x: &Decoded, y: &Decoded) -> f64 {
    if x.logits.len() != y.logits.len() {
        return f64::INFINITY;
    }
    x.logits
        .iter()
        .zip(&y.logits)
        .flat_map(|(r, s)| r.iter().zip(s).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

fn feature_invariance() -> Outcome {
    let t0 = Instant::now();
    let data = synthetic(SyntheticConfig { num_examples: 2500, seed: 3, ..Default::default() });
    let examples: Vec<Example> = data.train[..200].to_vec();
    let mut results = Vec::new();
    for mode in [EncodingMode::FeatureInvariant, EncodingMode::Vanilla] {
        let arch = TransformerConfig { encoding: mode, ..TransformerConfig::new(0, 0) };
        let recipe = TrainConfig { encoder_mode: mode, ..Default::default() };
        let model = Model::new(data.model_config(arch, &recipe), 5).unwrap();
        results.push(permutation_mismatches(&model, &data, &examples));
    }
    let elapsed = t0.elapsed();
    let ((inv_bad, inv_gap), (van_bad, _)) = (results[0], results[1]);
    Outcome::hard(
        inv_bad == 0 && 2 * van_bad >= examples.len() && elapsed < Duration::from_secs(300),
        format!(
            "feature-invariant: {inv_bad}/200 differ (max logit gap {inv_gap:.1e}); vanilla: {van_bad}/200 differ; {}",
            secs(elapsed)
        ),
    )
}

fn scheduler_values() -> Outcome {
    let got = [1000, 4000, 16000].map(|t| lr_schedule(t, 0.001, 4000));
    Outcome::hard(got == [0.00025, 0.001, 0.0005], format!("lr at 1000/4000/16000 = {got:?}"))
}

fn recipe_shape() -> Outcome {
    let t0 = Instant::now();
    let data = synthetic(SyntheticConfig {
        num_examples: 500,
        alphabet_size: 10,
        min_len: 2,
        max_len: 4,
        shape: LemmaShape::Uniform,
        seed: 5,
        ..Default::default()
    });
    let mut arch = tiny_arch();
    arch.d_model = 4;
    arch.num_heads = 1;
    arch.d_ff = 8;
    let recipe = TrainConfig::default();
    let dir = tempfile::tempdir().unwrap();
    let out = train(arch, &data, recipe.clone(), Some(dir.path())).unwrap();
    let files = std::fs::read_dir(dir.path()).unwrap().count();
    let steps: Vec<usize> = out.history.iter().map(|r| r.step).collect();
    let expected: Vec<usize> = (1..=50).map(|k| 400 * k).collect();
    let updates = out.last.adam.as_ref().map_or(0, |a| a.step);
    Outcome::hard(
        out.last.step == 20_000 && updates == 20_000 && files == 50 && steps == expected,
        format!(
            "{} updates, {files} checkpoints, evaluations at 400..=20000 every 400: {}; {}",
            updates,
            steps == expected,
            secs(t0.elapsed())
        ),
    )
}

/// Model and recipe used for the desk-scale learning run.
fn desk_scale_setup() -> (TransformerConfig, TrainConfig) {
    let mut arch = TransformerConfig::new(0, 0);
    arch.num_layers = 2;
    arch.d_model = 64;
    arch.d_ff = 256;
    arch.num_heads = 4;
    let recipe = TrainConfig {
        batch_size: 128,
        dropout_rate: 0.1,
        total_steps: 3000,
        eval_every: 100,
        warmup_steps: 400,
        peak_lr: 0.002,
        ..Default::default()
    };
    (arch, recipe)
}

fn desk_scale_learning() -> Outcome {
    let t0 = Instant::now();
    let data = synthetic(SyntheticConfig::default());
    let (arch, recipe) = desk_scale_setup();
    let mut t = Trainer::from_examples(arch, recipe.clone(), &data).unwrap();
    let mut best = (0.0, 0);
    while t.step() < recipe.total_steps {
        t.run_until(t.step() + recipe.eval_every).unwrap();
        let r = t.history().last().unwrap();
        if r.dev_acc > best.0 {
            best = (r.dev_acc, r.step);
        }
        if best.0 >= 0.99 {
            break;
        }
    }
    let elapsed = t0.elapsed();
    Outcome::hard(
        best.0 >= 0.99 && elapsed < Duration::from_secs(20 * 60),
        format!(
            "{} train / {} dev, best dev ACC {:.4} at update {}; {}",
            data.train.len(),
            data.dev.len(),
            best.0,
            best.1,
            secs(elapsed)
        ),
    )
}

fn batch_size_trend() -> Outcome {
    let t0 = Instant::now();
    let data = synthetic(SyntheticConfig::default());
    let mut arch = TransformerConfig::new(0, 0);
    arch.num_layers = 2;
    arch.d_model = 16;
    arch.d_ff = 64;
    arch.num_heads = 2;
    let base = TrainConfig {
        dropout_rate: 0.1,
        total_steps: 3000,
        eval_every: 300,
        warmup_steps: 200,
        peak_lr: 0.003,
        ..Default::default()
    };
    let report = sweep_batch_size(
        &arch,
        &data,
        &base,
        &[20, 128, 400],
        &[EncodingMode::FeatureInvariant],
        None,
        false,
    )
    .unwrap();
    for line in report.to_string().lines() {
        println!("    {line}");
    }
    let accs: Vec<String> = report
        .points
        .iter()
        .map(|p| format!("b{}={:.4}", p.batch_size, p.best_acc))
        .collect();
    let flag = if report.is_monotone() { "monotone" } else { "NON-MONOTONE (flagged)" };
    Outcome {
        pass: report.points.len() == 3,
        soft: true,
        detail: format!("{} {flag}; {}", accs.join(" "), secs(t0.elapsed())),
    }
}

fn edit_distance_oracle() -> Outcome {
    let t0 = Instant::now();
    let seqs = all_sequences(3, 4);
    let mut pairs = 0;
    let mut wrong = 0;
    for a in &seqs {
        for b in &seqs {
            pairs += 1;
            wrong += usize::from(edit_distance(a, b) != levenshtein_recursive(a, b));
        }
    }
    let mut r = rng(8);
    for _ in 0..1000 {
        let mut draw = || -> Vec<u8> {
            let n = r.gen_range(0..=6);
            (0..n).map(|_| r.gen_range(0..4)).collect()
        };
        let (a, b) = (draw(), draw());
        pairs += 1;
        wrong += usize::from(edit_distance(&a, &b) != levenshtein_recursive(&a, &b));
    }
    let elapsed = t0.elapsed();
    Outcome::hard(
        wrong == 0 && elapsed < Duration::from_secs(60),
        format!("{wrong} disagreements over {pairs} pairs; {}", secs(elapsed)),
    )
}

fn determinism_and_resume() -> Outcome {
    let t0 = Instant::now();
    let data = small_task(300, 12);
    let recipe = quick_recipe(2000, 400);
    let (da, db, dc) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let unbroken = train(tiny_arch(), &data, recipe.clone(), Some(da.path())).unwrap();
    train(tiny_arch(), &data, recipe.clone(), Some(db.path())).unwrap();
    let fifth = |d: &Path| std::fs::read(d.join("step_002000.ckpt")).unwrap();
    let same_fifth = fifth(da.path()) == fifth(db.path());

    let mut first = Trainer::from_examples(tiny_arch(), recipe, &data)
        .unwrap()
        .with_checkpoint_dir(dc.path())
        .unwrap();
    first.run_until(1000).unwrap();
    let path = dc.path().join("interrupted.ckpt");
    save_checkpoint(&first.checkpoint(), &path).unwrap();
    drop(first);
    let resumed = Trainer::resume(load_checkpoint(&path).unwrap(), data.train.clone(), data.dev.clone(), Some(dc.path()))
        .unwrap()
        .run()
        .unwrap();
    let same_params = resumed.last.params.same_values(&unbroken.last.params);
    let same_file = fifth(dc.path()) == fifth(da.path());
    Outcome::hard(
        same_fifth && same_params,
        format!(
            "checkpoint 5 identical across seeds: {same_fifth}; resumed at 1000 matches step 2000: {same_params} \
             (checkpoint file identical: {same_file}); {}",
            secs(t0.elapsed())
        ),
    )
}

fn pred(predicted: &[&str], gold: &[&str]) -> Prediction {
    let own = |s: &[&str]| s.iter().map(|x| x.to_string()).collect();
    Prediction { source: String::new(), predicted: own(predicted), gold: own(gold) }
}

fn chars(p: &str, g: &str) -> Prediction {
    Prediction { source: String::new(), predicted: split_chars(p), gold: split_chars(g) }
}

fn metric_fixtures() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };

    let r = evaluate(&[chars("ab", "ab"), chars("c", "c"), chars("dog", "dog")]).unwrap();
    check("all correct", [r.acc - 1.0, r.mean_dist, r.wer, r.cer_i, r.per].iter().all(|v| close(*v, 0.0)));

    let r = evaluate(&[chars("smeard", "smeared")]).unwrap();
    check("smeard", close(r.acc, 0.0) && close(r.mean_dist, 1.0) && close(r.cer_i, 1.0 / 7.0));

    let r = evaluate(&[chars("walk", "walk"), chars("wxyk", "walk")]).unwrap();
    check("two items", close(r.acc, 0.5) && close(r.mean_dist, 1.0) && close(r.cer_i, 0.5));

    // phonemes: exact, one substitution on 3, one deletion and one insertion on 6
    let r = evaluate(&[
        pred(&["K", "AE", "T"], &["K", "AE", "T"]),
        pred(&["D", "AA", "G"], &["D", "AO", "G"]),
        pred(&["B", "ER", "D", "Z", "IY", "Z"], &["B", "ER", "D", "IY", "Z", "S"]),
    ])
    .unwrap();
    check(
        "three phoneme items",
        close(r.acc, 1.0 / 3.0)
            && close(r.mean_dist, 1.0)
            && close(r.wer, 2.0 / 3.0)
            && close(r.per, 3.0 / 12.0)
            && close(r.cer_i, (1.0 / 3.0 + 2.0 / 6.0) / 2.0),
    );

    let h = error_length_histogram(&[chars("x", "abc"), chars("y", "abcdefghijkl"), chars("ok", "ok")], 5).unwrap();
    check(
        "histogram",
        h == [LengthBin { lo: 1, hi: 5, errors: 1 }, LengthBin { lo: 11, hi: 15, errors: 1 }],
    );
    Outcome::hard(
        failures.is_empty(),
        if failures.is_empty() {
            "all fixtures within 1e-12".to_string()
        } else {
            format!("mismatched fixtures: {}", failures.join(", "))
        },
    )
}

type Criterion = (usize, &'static str, fn() -> Outcome);

const CRITERIA: &[Criterion] = &[
    (1, "parameter count", parameter_count),
    (2, "gradient correctness", gradient_check),
    (3, "feature-order invariance", feature_invariance),
    (4, "scheduler values", scheduler_values),
    (5, "recipe shape", recipe_shape),
    (6, "desk-scale learning", desk_scale_learning),
    (7, "batch-size trend", batch_size_trend),
    (8, "edit-distance oracle", edit_distance_oracle),
    (9, "determinism and resume", determinism_and_resume),
    (10, "metric formulas", metric_fixtures),
];

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut hard_failures = 0;
    for &(no, name, run) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&no) {
            continue;
        }
        let outcome = run();
        let status = if outcome.pass { "PASS" } else { "FAIL" };
        let soft = if outcome.soft { " [soft]" } else { "" };
        println!("criterion {no:>2} {status}{soft} {name}: {}", outcome.detail);
        if !outcome.pass && !outcome.soft {
            hard_failures += 1;
        }
    }
    if hard_failures > 0 {
        println!("{hard_failures} criteria failed");
        std::process::exit(1);
    }
}
