//! Command-line workflows: `train`, `predict`, `evaluate`, `sweep` and
//! `gen-data`.
//!
//! Exit codes: 0 on success, 1 for data and I/O errors, 2 for bad flags or
//! configuration, 3 when training hits a non-finite loss.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    gen_synthetic_inflection, permute_features, read_task, write_inflection_tsv, Example, LemmaShape, RuleTable,
    SymbolUnit, SyntheticConfig, Task,
};
use crate::decode::{
    error_length_histogram, evaluate, predict_examples, read_predictions, write_predictions,
    DecodeOptions, MetricsReport, Prediction,
};
use crate::error::{Error, Result};
use crate::featenc::EncodingMode;
use crate::training::{
    load_checkpoint, save_checkpoint, sweep_batch_size, Checkpoint, TrainConfig, Trainer,
    TrainingData,
};
use crate::transformer::TransformerConfig;

pub const EXIT_DATA: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NON_FINITE: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "chartrans", version, about = "Character-level transformer transducer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and select the best checkpoint on the dev set.
    Train(TrainArgs),
    /// Decode a gold-annotated file with a checkpoint.
    Predict(PredictArgs),
    /// Score a predictions file, or a checkpoint on a gold-annotated file.
    Evaluate(EvaluateArgs),
    /// Train once per batch size (and encoder mode) and tabulate dev accuracy.
    Sweep(SweepArgs),
    /// Write synthetic inflection train/dev/test splits.
    GenData(GenDataArgs),
}

/// Recipe and architecture flags. Each one overrides the same key of the
/// `--config` file.
#[derive(Args, Debug, Clone, Default)]
pub struct RecipeFlags {
    /// TOML file with any of the keys below (snake_case).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub peak_lr: Option<f64>,
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    #[arg(long, visible_alias = "steps")]
    pub total_steps: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub label_smoothing: Option<f64>,
    #[arg(long)]
    pub adam_beta2: Option<f64>,
    #[arg(long)]
    pub dropout_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, visible_alias = "encoder")]
    pub encoder_mode: Option<EncodingMode>,
    #[arg(long)]
    pub micro_batch_size: Option<usize>,
    #[arg(long)]
    pub bucket_by_length: Option<bool>,
    #[arg(long)]
    pub eval_batch_size: Option<usize>,
    #[arg(long)]
    pub num_layers: Option<usize>,
    #[arg(long)]
    pub num_heads: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub max_positions: Option<usize>,
}

/// Architecture fields that do not depend on the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_positions: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        let c = TransformerConfig::new(0, 0);
        Architecture {
            num_layers: c.num_layers,
            num_heads: c.num_heads,
            d_model: c.d_model,
            d_ff: c.d_ff,
            max_positions: c.max_positions,
        }
    }
}

impl Architecture {
    pub fn to_config(&self) -> TransformerConfig {
        TransformerConfig {
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            max_positions: self.max_positions,
            ..TransformerConfig::new(0, 0)
        }
    }
}

const ARCH_KEYS: &[&str] = &["num_layers", "num_heads", "d_model", "d_ff", "max_positions"];
const RECIPE_KEYS: &[&str] = &[
    "peak_lr",
    "warmup_steps",
    "total_steps",
    "eval_every",
    "batch_size",
    "label_smoothing",
    "adam_beta2",
    "dropout_rate",
    "seed",
    "encoder_mode",
    "micro_batch_size",
    "bucket_by_length",
    "eval_batch_size",
];

impl RecipeFlags {
    /// File values first, then command-line overrides.
    pub fn resolve(&self) -> Result<(Architecture, TrainConfig)> {
        let mut table = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)?;
                let table: toml::Table = text
                    .parse()
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                if let Some(k) = table
                    .keys()
                    .find(|k| !ARCH_KEYS.contains(&k.as_str()) && !RECIPE_KEYS.contains(&k.as_str()))
                {
                    return Err(Error::Config(format!("{}: unknown key {k:?}", path.display())));
                }
                table
            }
            None => toml::Table::new(),
        };
        let mut set = |key: &str, value: Option<toml::Value>| {
            if let Some(v) = value {
                table.insert(key.to_string(), v);
            }
        };
        let int = |v: Option<usize>| v.map(|x| toml::Value::Integer(x as i64));
        let float = |v: Option<f64>| v.map(toml::Value::Float);
        set("peak_lr", float(self.peak_lr));
        set("warmup_steps", int(self.warmup_steps));
        set("total_steps", int(self.total_steps));
        set("eval_every", int(self.eval_every));
        set("batch_size", int(self.batch_size));
        set("label_smoothing", float(self.label_smoothing));
        set("adam_beta2", float(self.adam_beta2));
        set("dropout_rate", float(self.dropout_rate));
        set("seed", self.seed.map(|s| toml::Value::Integer(s as i64)));
        set("encoder_mode", self.encoder_mode.map(|m| toml::Value::String(m.to_string())));
        set("micro_batch_size", int(self.micro_batch_size));
        set("bucket_by_length", self.bucket_by_length.map(toml::Value::Boolean));
        set("eval_batch_size", int(self.eval_batch_size));
        set("num_layers", int(self.num_layers));
        set("num_heads", int(self.num_heads));
        set("d_model", int(self.d_model));
        set("d_ff", int(self.d_ff));
        set("max_positions", int(self.max_positions));

        let (mut arch, mut recipe) = (toml::Table::new(), toml::Table::new());
        for (k, v) in table {
            if ARCH_KEYS.contains(&k.as_str()) {
                arch.insert(k, v);
            } else {
                recipe.insert(k, v);
            }
        }
        let arch: Architecture = toml::Value::Table(arch)
            .try_into()
            .map_err(|e| Error::Config(e.to_string()))?;
        let recipe: TrainConfig = toml::Value::Table(recipe)
            .try_into()
            .map_err(|e| Error::Config(e.to_string()))?;
        recipe.validate()?;
        Ok((arch, recipe))
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long, default_value = "inflection", value_parser = parse_task)]
    pub task: Task,
    /// Run directory.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    #[command(flatten)]
    pub recipe: RecipeFlags,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "inflection", value_parser = parse_task)]
    pub task: Task,
    #[arg(long, default_value = "predictions.tsv")]
    pub output: PathBuf,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
}

/// Units used for edit distances.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum MetricUnit {
    /// Characters.
    Cer,
    /// Space-separated phonemes.
    Per,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Predictions file (source, gold, predicted).
    #[arg(long, conflicts_with_all = ["checkpoint", "input"])]
    pub predictions: Option<PathBuf>,
    #[arg(long, requires = "input")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, requires = "checkpoint")]
    pub input: Option<PathBuf>,
    #[arg(long, default_value = "inflection", value_parser = parse_task)]
    pub task: Task,
    /// Symbol unit for distances; defaults to the task's target unit.
    #[arg(long)]
    pub metrics: Option<MetricUnit>,
    /// Also write the key-value report here.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Width of the gold-length bins of the error histogram.
    #[arg(long, default_value_t = 2)]
    pub bin_width: usize,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long, default_value = "inflection", value_parser = parse_task)]
    pub task: Task,
    #[arg(long, value_delimiter = ',', default_value = "20,128,400")]
    pub batch_sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "feature_invariant")]
    pub modes: Vec<EncodingMode>,
    /// Shuffle dev feature bundles (seeded) to probe order sensitivity.
    #[arg(long)]
    pub permute_dev: Option<u64>,
    /// Run the trainings on separate threads.
    #[arg(long)]
    pub parallel: bool,
    #[arg(long, default_value = "sweep")]
    pub out: PathBuf,
    #[command(flatten)]
    pub recipe: RecipeFlags,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Rule table (`bundle<TAB>rule` lines); the built-in four bundles
    /// otherwise.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long, default_value_t = 2500)]
    pub num_examples: usize,
    #[arg(long, default_value_t = 26)]
    pub alphabet_size: usize,
    #[arg(long, default_value_t = 4)]
    pub min_len: usize,
    #[arg(long, default_value_t = 8)]
    pub max_len: usize,
    /// `syllabic` or `uniform` letter sequences.
    #[arg(long, default_value = "syllabic")]
    pub lemma_shape: LemmaShape,
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Describes a run directory well enough to repeat the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub build: String,
    pub task: Task,
    pub model_config: TransformerConfig,
    pub train_config: TrainConfig,
    pub datasets: Vec<DatasetRecord>,
    pub layout: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const HISTORY_FILE: &str = "history.tsv";
pub const PREDICTIONS_FILE: &str = "predictions.tsv";
pub const METRICS_FILE: &str = "metrics.txt";

fn build_id() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

fn dataset_record(role: &str, path: &Path) -> Result<DatasetRecord> {
    let bytes = fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok(DatasetRecord {
        role: role.to_string(),
        path: path.to_path_buf(),
        sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
    })
}

fn unit_of(metrics: Option<MetricUnit>, task: Task) -> SymbolUnit {
    match metrics {
        Some(MetricUnit::Cer) => SymbolUnit::Characters,
        Some(MetricUnit::Per) => SymbolUnit::Phonemes,
        None => task.target_unit(),
    }
}

fn history_tsv(ck: &Checkpoint) -> String {
    let mut out = String::from("step\tdev_acc\ttrain_loss\tlr\n");
    for r in &ck.history {
        out.push_str(&format!("{}\t{:.6}\t{:.6}\t{:.8}\n", r.step, r.dev_acc, r.train_loss, r.lr));
    }
    out
}

fn report_text(report: &MetricsReport, predictions: &[Prediction], bin_width: usize) -> Result<String> {
    let mut text = format!("{report}\n");
    text.push_str(&format!("errors by gold length, bins of {bin_width}\n"));
    for bin in error_length_histogram(predictions, bin_width)? {
        text.push_str(&format!("{:>4}-{:<4} {}\n", bin.lo, bin.hi, bin.errors));
    }
    text.push('\n');
    text.push_str(&report.to_key_values());
    Ok(text)
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let (arch, recipe) = args.recipe.resolve()?;
    let train_set = read_task(&args.train, args.task)?;
    let dev_set = read_task(&args.dev, args.task)?;
    let data = TrainingData::new(train_set, dev_set)?;
    let model_config = data.model_config(arch.to_config(), &recipe);
    model_config.validate()?;

    fs::create_dir_all(&args.out)?;
    let manifest = RunManifest {
        build: build_id(),
        task: args.task,
        model_config: model_config.clone(),
        train_config: recipe.clone(),
        datasets: vec![
            dataset_record("train", &args.train)?,
            dataset_record("dev", &args.dev)?,
        ],
        layout: [MANIFEST_FILE, CHECKPOINT_DIR, HISTORY_FILE, PREDICTIONS_FILE, METRICS_FILE]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    };
    fs::write(
        args.out.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?,
    )?;

    let ck_dir = args.out.join(CHECKPOINT_DIR);
    let trainer = Trainer::from_examples(model_config, recipe, &data)?
        .with_checkpoint_dir(&ck_dir)?
        .on_eval(|r| {
            println!(
                "step {:>6}  dev_acc {:.4}  train_loss {:.4}  lr {:.6}",
                r.step, r.dev_acc, r.train_loss, r.lr
            )
        });
    let outcome = trainer.run()?;
    save_checkpoint(&outcome.best, ck_dir.join(BEST_CHECKPOINT))?;
    fs::write(args.out.join(HISTORY_FILE), history_tsv(&outcome.last))?;
    if let Some(acc) = outcome.best_acc {
        println!("best step {} dev_acc {acc:.4}", outcome.best.step);
    }
    if !data.dev.is_empty() {
        let model = outcome.best.model()?;
        let predictions = predict_examples(
            &model,
            &data.src_vocab,
            &data.tgt_vocab,
            &data.dev,
            &DecodeOptions::default(),
        )?;
        let unit = args.task.target_unit();
        fs::write(args.out.join(PREDICTIONS_FILE), write_predictions(&predictions, unit))?;
        let report = evaluate(&predictions)?;
        fs::write(args.out.join(METRICS_FILE), report_text(&report, &predictions, 2)?)?;
    }
    Ok(())
}

fn checkpoint_predictions(ck_path: &Path, input: &Path, task: Task, batch_size: usize) -> Result<Vec<Prediction>> {
    let ck = load_checkpoint(ck_path)?;
    let examples = read_task(input, task)?;
    let model = ck.model()?;
    let opts = DecodeOptions {
        batch_size,
        ..Default::default()
    };
    predict_examples(&model, &ck.src_vocab, &ck.tgt_vocab, &examples, &opts)
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let predictions = checkpoint_predictions(&args.checkpoint, &args.input, args.task, args.batch_size)?;
    fs::write(&args.output, write_predictions(&predictions, args.task.target_unit()))?;
    let correct = predictions.iter().filter(|p| p.correct()).count();
    println!("{} predictions, {} exact", predictions.len(), correct);
    Ok(())
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let unit = unit_of(args.metrics, args.task);
    let predictions = match (&args.predictions, &args.checkpoint, &args.input) {
        (Some(p), _, _) => read_predictions(p, unit)?,
        (None, Some(ck), Some(input)) => checkpoint_predictions(ck, input, args.task, 128)?,
        _ => {
            return Err(Error::Config(
                "evaluate needs --predictions, or --checkpoint with --input".into(),
            ))
        }
    };
    let report = evaluate(&predictions)?;
    let text = report_text(&report, &predictions, args.bin_width)?;
    print!("{text}");
    if let Some(out) = &args.output {
        fs::write(out, text)?;
    }
    Ok(())
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let (arch, recipe) = args.recipe.resolve()?;
    if args.batch_sizes.is_empty() || args.batch_sizes.contains(&0) {
        return Err(Error::Config("--batch-sizes must list positive sizes".into()));
    }
    let train_set = read_task(&args.train, args.task)?;
    let mut dev_set: Vec<Example> = read_task(&args.dev, args.task)?;
    if let Some(seed) = args.permute_dev {
        dev_set = permute_features(&dev_set, seed);
    }
    let data = TrainingData::new(train_set, dev_set)?;
    let arch_config = data.model_config(arch.to_config(), &recipe);
    fs::create_dir_all(&args.out)?;
    let report = sweep_batch_size(
        &arch_config,
        &data,
        &recipe,
        &args.batch_sizes,
        &args.modes,
        Some(&args.out),
        args.parallel,
    )?;
    print!("{report}");
    fs::write(args.out.join("report.txt"), report.to_string())?;
    fs::write(args.out.join("curve.tsv"), report.curve_tsv())?;
    Ok(())
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    let rules = match &args.rules {
        Some(path) => fs::read_to_string(path)?.parse()?,
        None => RuleTable::default(),
    };
    let cfg = SyntheticConfig {
        num_examples: args.num_examples,
        alphabet_size: args.alphabet_size,
        min_len: args.min_len,
        max_len: args.max_len,
        shape: args.lemma_shape,
        seed: args.seed,
    };
    let splits = gen_synthetic_inflection(&cfg, &rules)?;
    fs::create_dir_all(&args.out)?;
    for (name, set) in [("train", &splits.train), ("dev", &splits.dev), ("test", &splits.test)] {
        fs::write(args.out.join(format!("{name}.tsv")), write_inflection_tsv(set))?;
    }
    println!(
        "wrote {} train, {} dev, {} test examples to {}",
        splits.train.len(),
        splits.dev.len(),
        splits.test.len(),
        args.out.display()
    );
    Ok(())
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonFiniteLoss { .. } => EXIT_NON_FINITE,
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::GenData(a) => cmd_gen_data(a),
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
