#![allow(dead_code)]

use chartrans::data::{encode_examples, Batch, EncodedExample, Example, SymbolKind, Vocabulary};
use chartrans::featenc::{EncodingMode, SourceEncoder};
use chartrans::numerics::{Graph, ParamStore, Tensor, Var};
use chartrans::transformer::{Model, TransformerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor so that gradients that are numerically zero compare on
/// an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Largest relative error between backprop and central differences for a
/// scalar function of the given leaf inputs.
pub fn check_inputs(inputs: &[Tensor], f: impl Fn(&mut Graph<'_>, &[Var]) -> Var) -> f64 {
    let empty = ParamStore::new();
    let eval = |values: &[Tensor]| {
        let mut g = Graph::new(&empty, false, rng(0));
        let vars: Vec<Var> = values.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars);
        g.value(out)[0]
    };
    let mut g = Graph::new(&empty, false, rng(0));
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.input(t.clone().with_requires_grad(true)))
        .collect();
    let out = f(&mut g, &vars);
    let grads = g.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            plus[i].values_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].values_mut()[j] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    worst
}

/// Same check against every value of every parameter in `params`.
pub fn check_params(params: &ParamStore, f: impl Fn(&mut Graph<'_>) -> Var) -> (f64, usize) {
    let eval = |store: &ParamStore| {
        let mut g = Graph::new(store, false, rng(0));
        let out = f(&mut g);
        g.value(out)[0]
    };
    let mut g = Graph::new(params, false, rng(0));
    let out = f(&mut g);
    let grads = g.backward(out).unwrap();
    let mut work = params.clone();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let ids: Vec<_> = params.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        let n = params.get(id).numel();
        let analytic = grads.param(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        for j in 0..n {
            let orig = work.get(id).values()[j];
            work.get_mut(id).values_mut()[j] = orig + FD_STEP;
            let up = eval(&work);
            work.get_mut(id).values_mut()[j] = orig - FD_STEP;
            let down = eval(&work);
            work.get_mut(id).values_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[j], numeric));
            checked += 1;
        }
    }
    (worst, checked)
}

/// Vocabulary with the reserved symbols plus the given features and
/// characters.
pub fn vocab(features: &[&str], chars: &[&str]) -> Vocabulary {
    let mut v = Vocabulary::new();
    for f in features {
        v.add(SymbolKind::Feature, f);
    }
    for c in chars {
        v.add(SymbolKind::Character, c);
    }
    v
}

/// One layer, `d_model` 8, two heads, `d_ff` 16, vocabularies of 10, and a
/// batch of two examples padded to length 5 on both sides.
pub fn tiny_setup(mode: EncodingMode) -> (Model, Batch) {
    let src = vocab(&["V", "PST"], &["a", "b", "c", "d"]);
    let tgt = vocab(&[], &["a", "b", "c", "d", "e", "f"]);
    assert_eq!((src.len(), tgt.len()), (10, 10));
    let examples = vec![
        Example::from_strs("abc", &["V", "PST"], "abcd"),
        Example::from_strs("dca", &["PST"], "fed"),
    ];
    let encoded = encode_examples(&examples, &src, &tgt, SourceEncoder::new(mode)).unwrap();
    let batch = Batch::from_examples(&encoded, &[0, 1]).unwrap();
    assert_eq!((batch.source.len, batch.tgt_len), (5, 5));
    let mut config = TransformerConfig::new(10, 10);
    config.num_layers = 1;
    config.d_model = 8;
    config.num_heads = 2;
    config.d_ff = 16;
    config.dropout_rate = 0.0;
    config.max_positions = 32;
    config.encoding = mode;
    let model = Model::new(config, 3).unwrap();
    (model, batch)
}

pub fn encode_all(examples: &[Example], src: &Vocabulary, tgt: &Vocabulary, mode: EncodingMode) -> Vec<EncodedExample> {
    encode_examples(examples, src, tgt, SourceEncoder::new(mode)).unwrap()
}

/// Levenshtein distance by plain recursion over the three edit operations.
pub fn levenshtein_recursive<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    match (a.split_last(), b.split_last()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = levenshtein_recursive(ra, rb) + usize::from(x != y);
            let del = levenshtein_recursive(ra, b) + 1;
            let ins = levenshtein_recursive(a, rb) + 1;
            sub.min(del).min(ins)
        }
    }
}

/// Every sequence over `0..alphabet` of length at most `max_len`.
pub fn all_sequences(alphabet: u8, max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for c in 0..alphabet {
                let mut t: Vec<u8> = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Small synthetic inflection task with short lemmata.
pub fn small_task(num_examples: usize, seed: u64) -> chartrans::training::TrainingData {
    use chartrans::data::{gen_synthetic_inflection, RuleTable, SyntheticConfig};
    let cfg = SyntheticConfig {
        num_examples,
        alphabet_size: 6,
        min_len: 2,
        max_len: 4,
        seed,
        ..Default::default()
    };
    let splits = gen_synthetic_inflection(&cfg, &RuleTable::default()).unwrap();
    chartrans::training::TrainingData::new(splits.train, splits.dev).unwrap()
}

pub fn tiny_arch() -> TransformerConfig {
    let mut c = TransformerConfig::new(0, 0);
    c.num_layers = 1;
    c.num_heads = 2;
    c.d_model = 8;
    c.d_ff = 16;
    c.max_positions = 64;
    c
}

pub fn quick_recipe(total_steps: usize, eval_every: usize) -> chartrans::training::TrainConfig {
    chartrans::training::TrainConfig {
        total_steps,
        eval_every,
        warmup_steps: 20,
        peak_lr: 0.005,
        batch_size: 16,
        dropout_rate: 0.1,
        seed: 11,
        ..Default::default()
    }
}
