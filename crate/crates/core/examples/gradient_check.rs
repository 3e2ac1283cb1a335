//! Compares backpropagated gradients of the training loss with central
//! differences on a one-layer model.

use chartrans::data::{encode_examples, Batch, Example, SymbolKind, Vocabulary};
use chartrans::featenc::SourceEncoder;
use chartrans::numerics::{Graph, ParamStore};
use chartrans::transformer::{Model, TransformerConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn loss(params: &ParamStore, model: &Model, batch: &Batch) -> f64 {
    let mut g = Graph::new(params, false, ChaCha8Rng::seed_from_u64(0));
    let l = model.loss(&mut g, batch, 0.1).unwrap();
    g.value(l)[0]
}

fn main() -> chartrans::Result<()> {
    let mut src = Vocabulary::new();
    let mut tgt = Vocabulary::new();
    for f in ["V", "PST"] {
        src.add(SymbolKind::Feature, f);
    }
    for c in ["w", "a", "l", "k"] {
        src.add(SymbolKind::Character, c);
    }
    for c in ["w", "a", "l", "k", "e", "d"] {
        tgt.add(SymbolKind::Character, c);
    }
    let examples = [Example::from_strs("walk", &["V", "PST"], "walked"), Example::from_strs("law", &["V"], "law")];
    let encoded = encode_examples(&examples, &src, &tgt, SourceEncoder::default())?;
    let batch = Batch::from_examples(&encoded, &[0, 1])?;

    let mut config = TransformerConfig::new(src.len(), tgt.len());
    config.num_layers = 1;
    config.d_model = 8;
    config.num_heads = 2;
    config.d_ff = 16;
    config.dropout_rate = 0.0;
    let model = Model::new(config, 7)?;

    let mut g = Graph::new(&model.params, false, ChaCha8Rng::seed_from_u64(0));
    let l = model.loss(&mut g, &batch, 0.1)?;
    let grads = g.backward(l)?;
    let mut work = model.params.clone();
    let ids: Vec<_> = model.params.iter().map(|(id, name, _)| (id, name.to_string())).collect();
    let mut worst: f64 = 0.0;
    for (id, name) in ids {
        let analytic = grads.param(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; work.get(id).numel()]);
        let mut tensor_worst: f64 = 0.0;
        for (j, &a) in analytic.iter().enumerate() {
            let orig = work.get(id).values()[j];
            work.get_mut(id).values_mut()[j] = orig + H;
            let up = loss(&work, &model, &batch);
            work.get_mut(id).values_mut()[j] = orig - H;
            let down = loss(&work, &model, &batch);
            work.get_mut(id).values_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * H);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            tensor_worst = tensor_worst.max(rel);
        }
        println!("{name:<40} {tensor_worst:.2e}");
        worst = worst.max(tensor_worst);
    }
    println!("max relative error {worst:.2e} over {} values", model.params.num_values());
    Ok(())
}
