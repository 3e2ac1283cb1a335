use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{build_vocab, encode_examples, epoch_order, Batch, EncodedExample, Example, Vocabulary};
use crate::decode::{greedy_decode, DecodeOptions};
use crate::error::{Error, Result};
use crate::featenc::{SourceEncoder, UnknownPolicy};
use crate::numerics::{adam_step, AdamState, Graph, ParamStore};
use crate::transformer::{Model, TransformerConfig};

use super::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use super::{lr_schedule, TrainConfig};

/// Offset separating the dropout stream from the data-order stream.
const DROPOUT_SEED_SALT: u64 = 0x6a09_e667_f3bc_c909;
/// Batches per length-sorted group when bucketing.
const BUCKET_GROUP: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub dev_acc: f64,
    /// Mean training loss over the updates since the previous evaluation.
    pub train_loss: f64,
    pub lr: f64,
}

/// Training and development examples with the vocabularies used to encode
/// them.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
}

impl TrainingData {
    /// Vocabularies are built from the training split only.
    pub fn new(train: Vec<Example>, dev: Vec<Example>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::invalid("empty training set"));
        }
        let (src_vocab, tgt_vocab) = build_vocab(&train);
        Ok(TrainingData {
            train,
            dev,
            src_vocab,
            tgt_vocab,
        })
    }

    /// Model config with the vocabulary sizes filled in.
    pub fn model_config(&self, mut arch: TransformerConfig, recipe: &TrainConfig) -> TransformerConfig {
        arch.src_vocab_size = self.src_vocab.len();
        arch.tgt_vocab_size = self.tgt_vocab.len();
        recipe.apply_to(&mut arch);
        arch
    }
}

struct BestSnapshot {
    step: usize,
    acc: f64,
    params: ParamStore,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the best evaluated step (the initial model when no
    /// evaluation ran).
    pub best: Checkpoint,
    pub best_acc: Option<f64>,
    pub history: Vec<EvalRecord>,
    /// State after the last update.
    pub last: Checkpoint,
}

type EvalObserver = Box<dyn FnMut(&EvalRecord)>;

/// Step-wise trainer. [`Trainer::run`] executes the whole recipe; the finer
/// methods allow interruption and resumption.
pub struct Trainer {
    model: Model,
    config: TrainConfig,
    adam: AdamState,
    step: usize,
    history: Vec<EvalRecord>,
    best: Option<BestSnapshot>,
    train: Vec<EncodedExample>,
    dev: Vec<EncodedExample>,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    checkpoint_dir: Option<PathBuf>,
    epoch_plan: Option<(u64, Vec<Vec<usize>>)>,
    loss_sum: f64,
    loss_count: usize,
    observer: Option<EvalObserver>,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig, data: &TrainingData) -> Result<Self> {
        config.validate()?;
        if model.config.encoding != config.encoder_mode {
            return Err(Error::Config(format!(
                "model encodes sources as {} but the recipe asks for {}",
                model.config.encoding, config.encoder_mode
            )));
        }
        if model.config.dropout_rate != config.dropout_rate {
            return Err(Error::Config(format!(
                "model dropout {} differs from recipe dropout {}",
                model.config.dropout_rate, config.dropout_rate
            )));
        }
        if model.config.src_vocab_size != data.src_vocab.len()
            || model.config.tgt_vocab_size != data.tgt_vocab.len()
        {
            return Err(Error::Config("model vocabulary sizes do not match the data".into()));
        }
        let encoder = SourceEncoder::new(config.encoder_mode);
        let train = encode_examples(&data.train, &data.src_vocab, &data.tgt_vocab, encoder)?;
        if train.is_empty() {
            return Err(Error::invalid("empty training set"));
        }
        let dev = encode_examples(
            &data.dev,
            &data.src_vocab,
            &data.tgt_vocab,
            encoder.with_unknown(UnknownPolicy::MapToUnk),
        )?;
        let adam = AdamState::new(&model.params, config.adam());
        Ok(Trainer {
            model,
            config,
            adam,
            step: 0,
            history: Vec::new(),
            best: None,
            train,
            dev,
            src_vocab: data.src_vocab.clone(),
            tgt_vocab: data.tgt_vocab.clone(),
            checkpoint_dir: None,
            epoch_plan: None,
            loss_sum: 0.0,
            loss_count: 0,
            observer: None,
        })
    }

    /// Builds vocabularies and a fresh model (seeded by the recipe seed).
    pub fn from_examples(arch: TransformerConfig, config: TrainConfig, data: &TrainingData) -> Result<Self> {
        let model = Model::new(data.model_config(arch, &config), config.seed)?;
        Self::new(model, config, data)
    }

    /// Restores a trainer from a checkpoint holding optimizer state. The best
    /// snapshot so far is reloaded from `checkpoint_dir` when it is not the
    /// checkpoint itself.
    pub fn resume(ck: Checkpoint, data_train: Vec<Example>, data_dev: Vec<Example>, checkpoint_dir: Option<&Path>) -> Result<Self> {
        let adam = ck
            .adam
            .clone()
            .ok_or_else(|| Error::invalid("checkpoint has no optimizer state"))?;
        let data = TrainingData {
            train: data_train,
            dev: data_dev,
            src_vocab: ck.src_vocab.clone(),
            tgt_vocab: ck.tgt_vocab.clone(),
        };
        let model = ck.model()?;
        let mut t = Trainer::new(model, ck.train_config.clone(), &data)?;
        t.adam = adam;
        t.step = ck.step;
        t.history = ck.history.clone();
        (t.loss_sum, t.loss_count) = ck.pending_loss;
        t.checkpoint_dir = checkpoint_dir.map(Path::to_path_buf);
        if let Some(best_step) = ck.best_step {
            let acc = t
                .history
                .iter()
                .find(|r| r.step == best_step)
                .map(|r| r.dev_acc)
                .ok_or_else(|| Error::CorruptCheckpoint("best step missing from history".into()))?;
            let params = if best_step == ck.step {
                ck.params.clone()
            } else {
                let dir = checkpoint_dir.ok_or_else(|| {
                    Error::invalid("resuming needs the checkpoint directory to recover the best model")
                })?;
                load_checkpoint(checkpoint_path(dir, best_step))?.params
            };
            t.best = Some(BestSnapshot {
                step: best_step,
                acc,
                params,
            });
        }
        Ok(t)
    }

    /// Write a checkpoint file at every evaluation.
    pub fn with_checkpoint_dir(mut self, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        self.checkpoint_dir = Some(dir);
        Ok(self)
    }

    /// Called after every dev evaluation.
    pub fn on_eval(mut self, f: impl FnMut(&EvalRecord) + 'static) -> Self {
        self.observer = Some(Box::new(f));
        self
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn history(&self) -> &[EvalRecord] {
        &self.history
    }

    pub fn vocabularies(&self) -> (&Vocabulary, &Vocabulary) {
        (&self.src_vocab, &self.tgt_vocab)
    }

    fn batches_per_epoch(&self) -> usize {
        self.train.len().div_ceil(self.config.batch_size)
    }

    fn plan_for_epoch(&self, epoch: u64) -> Vec<Vec<usize>> {
        let order = epoch_order(self.train.len(), self.config.seed, epoch, true);
        let bs = self.config.batch_size;
        if !self.config.bucket_by_length {
            return order.chunks(bs).map(<[usize]>::to_vec).collect();
        }
        let mut batches = Vec::new();
        for group in order.chunks(bs * BUCKET_GROUP) {
            let mut group = group.to_vec();
            group.sort_by_key(|&i| (self.train[i].source.len(), self.train[i].target.len()));
            batches.extend(group.chunks(bs).map(<[usize]>::to_vec));
        }
        batches
    }

    fn batch_ids(&mut self, index: usize) -> (usize, Vec<usize>) {
        let per_epoch = self.batches_per_epoch();
        let epoch = (index / per_epoch) as u64;
        let within = index % per_epoch;
        if self.epoch_plan.as_ref().map(|(e, _)| *e) != Some(epoch) {
            self.epoch_plan = Some((epoch, self.plan_for_epoch(epoch)));
        }
        let plan = &self.epoch_plan.as_ref().unwrap().1;
        (within, plan[within].clone())
    }

    /// One optimizer update. Returns the batch loss.
    pub fn train_step(&mut self) -> Result<f64> {
        let (batch_index, ids) = self.batch_ids(self.step);
        let step = self.step + 1;
        let lr = lr_schedule(step, self.config.peak_lr, self.config.warmup_steps);
        let chunk = self.config.micro_batch_size.unwrap_or(ids.len()).max(1);
        let total_tokens: usize = ids.iter().map(|&i| self.train[i].target.len() + 1).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ DROPOUT_SEED_SALT);
        rng.set_stream(step as u64);
        self.model.params.zero_grad();
        let mut loss = 0.0;
        for part in ids.chunks(chunk) {
            let batch = Batch::from_examples(&self.train, part)?;
            let weight = batch.target_tokens() as f64 / total_tokens as f64;
            let mut g = Graph::new(&self.model.params, true, rng);
            let l = self.model.loss(&mut g, &batch, self.config.label_smoothing)?;
            let l = g.scale(l, weight);
            let grads = g.backward(l)?;
            loss += g.value(l)[0];
            rng = g.into_rng();
            grads.accumulate_into(&mut self.model.params)?;
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                lr,
                batch: batch_index,
                loss,
            });
        }
        adam_step(&mut self.model.params, &mut self.adam, lr)?;
        self.step = step;
        self.loss_sum += loss;
        self.loss_count += 1;
        if step.is_multiple_of(self.config.eval_every) {
            self.evaluate_and_checkpoint(lr)?;
        }
        Ok(loss)
    }

    /// Exact-match accuracy of greedy decoding on the dev set.
    pub fn dev_accuracy(&self) -> Result<f64> {
        if self.dev.is_empty() {
            return Ok(0.0);
        }
        let sources: Vec<_> = self.dev.iter().map(|e| e.source.clone()).collect();
        let opts = DecodeOptions {
            batch_size: self.config.eval_batch_size,
            ..Default::default()
        };
        let decoded = greedy_decode(&self.model, &sources, &opts)?;
        let correct = decoded
            .iter()
            .zip(&self.dev)
            .filter(|(d, e)| d.symbols == e.target)
            .count();
        Ok(correct as f64 / self.dev.len() as f64)
    }

    fn evaluate_and_checkpoint(&mut self, lr: f64) -> Result<()> {
        let dev_acc = self.dev_accuracy()?;
        let record = EvalRecord {
            step: self.step,
            dev_acc,
            train_loss: self.loss_sum / self.loss_count.max(1) as f64,
            lr,
        };
        self.loss_sum = 0.0;
        self.loss_count = 0;
        self.history.push(record.clone());
        if self.best.as_ref().is_none_or(|b| dev_acc > b.acc) {
            self.best = Some(BestSnapshot {
                step: self.step,
                acc: dev_acc,
                params: self.model.params.clone(),
            });
        }
        if let Some(dir) = &self.checkpoint_dir {
            save_checkpoint(&self.checkpoint(), checkpoint_path(dir, self.step))?;
        }
        if let Some(f) = &mut self.observer {
            f(&record);
        }
        Ok(())
    }

    /// Resumable snapshot of the current state.
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model_config: self.model.config.clone(),
            train_config: self.config.clone(),
            step: self.step,
            params: self.model.params.clone(),
            adam: Some(self.adam.clone()),
            rng_seed: self.config.seed ^ DROPOUT_SEED_SALT,
            history: self.history.clone(),
            best_step: self.best.as_ref().map(|b| b.step),
            pending_loss: (self.loss_sum, self.loss_count),
            src_vocab: self.src_vocab.clone(),
            tgt_vocab: self.tgt_vocab.clone(),
        }
    }

    /// Trains until `step` updates have been made in total (capped at the
    /// recipe's budget).
    pub fn run_until(&mut self, step: usize) -> Result<()> {
        let target = step.min(self.config.total_steps);
        while self.step < target {
            self.train_step()?;
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<TrainOutcome> {
        self.run_until(self.config.total_steps)?;
        Ok(self.finish())
    }

    pub fn finish(self) -> TrainOutcome {
        let last = self.checkpoint();
        let (best, best_acc) = match &self.best {
            Some(b) => (
                Checkpoint {
                    step: b.step,
                    params: b.params.clone(),
                    adam: None,
                    ..last.clone()
                },
                Some(b.acc),
            ),
            None => (last.clone(), None),
        };
        TrainOutcome {
            best,
            best_acc,
            history: self.history,
            last,
        }
    }
}

pub(crate) fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("step_{step:06}.ckpt"))
}

/// Runs the full recipe on a fresh model.
pub fn train(
    arch: TransformerConfig,
    data: &TrainingData,
    config: TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let mut t = Trainer::from_examples(arch, config, data)?;
    if let Some(dir) = checkpoint_dir {
        t = t.with_checkpoint_dir(dir)?;
    }
    t.run()
}
