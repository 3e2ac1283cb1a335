//! Incremental decoding with cached keys and values. Uses the same kernels as
//! the graph path, without recording anything.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::featenc::{EncodedSource, SourceBatch};
use crate::numerics::kernels::{self, gemm, layer_norm_forward};
use crate::numerics::Graph;

use super::forward::LN_EPS;
use super::layout::{AttentionIds, LinearIds, NormIds};
use super::{ForwardOptions, Model};

/// Encoder output for a batch of sources.
#[derive(Clone, Debug)]
pub struct EncoderMemory {
    pub batch: usize,
    pub src_len: usize,
    /// `[batch·src_len, d_model]`.
    pub values: Vec<f64>,
    pub key_valid: Vec<bool>,
}

/// Runs the encoder in evaluation mode.
pub fn encode_sources(model: &Model, sources: &[&EncodedSource]) -> Result<EncoderMemory> {
    let src = SourceBatch::from_sources(sources.iter().copied())?;
    let mut g = Graph::new(&model.params, false, ChaCha8Rng::seed_from_u64(0));
    let out = model.encode(&mut g, &src)?;
    Ok(EncoderMemory {
        batch: src.batch,
        src_len: src.len,
        values: g.value(out).to_vec(),
        key_valid: src.mask,
    })
}

struct LayerCache {
    self_k: Vec<f64>,
    self_v: Vec<f64>,
    cross_k: Vec<f64>,
    cross_v: Vec<f64>,
}

/// Decoder state for step-by-step generation of a batch.
pub struct DecoderState<'m> {
    model: &'m Model,
    memory: EncoderMemory,
    layers: Vec<LayerCache>,
    steps: usize,
    opts: ForwardOptions,
}

impl<'m> DecoderState<'m> {
    pub fn new(model: &'m Model, memory: EncoderMemory, opts: ForwardOptions) -> Self {
        let rows = memory.batch * memory.src_len;
        let layers = model
            .ids
            .decoder
            .iter()
            .map(|l| LayerCache {
                self_k: Vec::new(),
                self_v: Vec::new(),
                cross_k: linear(model, &memory.values, rows, l.cross_attn.k),
                cross_v: linear(model, &memory.values, rows, l.cross_attn.v),
            })
            .collect();
        DecoderState {
            model,
            memory,
            layers,
            steps: 0,
            opts,
        }
    }

    pub fn batch(&self) -> usize {
        self.memory.batch
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Feeds one token per batch row and returns `[batch, tgt_vocab]` logits
    /// for the next position.
    pub fn step(&mut self, tokens: &[usize]) -> Result<Vec<f64>> {
        let model = self.model;
        let cfg = &model.config;
        let (batch, d) = (self.memory.batch, cfg.d_model);
        if tokens.len() != batch {
            return Err(Error::shape(format!(
                "{} tokens for a batch of {batch}",
                tokens.len()
            )));
        }
        let position = self.steps + 1;
        if position >= cfg.max_positions {
            return Err(Error::invalid(format!(
                "target prefix of length {position} exceeds max_positions {}",
                cfg.max_positions
            )));
        }
        let emb = model.params.get(model.ids.tgt_embed).values();
        let pe = model.positions.row(position);
        let scale = (d as f64).sqrt();
        let mut x = Vec::with_capacity(batch * d);
        for &t in tokens {
            if t >= cfg.tgt_vocab_size {
                return Err(Error::invalid(format!("token {t} outside target vocabulary")));
            }
            x.extend(emb[t * d..(t + 1) * d].iter().zip(pe).map(|(e, p)| e * scale + p));
        }
        let t_len = self.steps + 1;
        for (li, layer) in model.ids.decoder.iter().enumerate() {
            let h = norm(model, &x, layer.self_attn_norm);
            let k_new = linear(model, &h, batch, layer.self_attn.k);
            let v_new = linear(model, &h, batch, layer.self_attn.v);
            let cache = &mut self.layers[li];
            // cache rows are ordered [batch][step]; rebuild with the new step appended
            cache.self_k = append_step(&cache.self_k, &k_new, batch, t_len - 1, d);
            cache.self_v = append_step(&cache.self_v, &v_new, batch, t_len - 1, d);
            let a = attend(
                model,
                &layer.self_attn,
                &h,
                &cache.self_k,
                &cache.self_v,
                t_len,
                None,
            );
            add_in_place(&mut x, &a);
            if !self.opts.ablate_cross_attention {
                let h = norm(model, &x, layer.cross_attn_norm);
                let c = attend(
                    model,
                    &layer.cross_attn,
                    &h,
                    &cache.cross_k,
                    &cache.cross_v,
                    self.memory.src_len,
                    Some(&self.memory.key_valid),
                );
                add_in_place(&mut x, &c);
            }
            let h = norm(model, &x, layer.ff_norm);
            let mut f = linear(model, &h, batch, layer.ff.fc1);
            for v in &mut f {
                *v = v.max(0.0);
            }
            let f = linear(model, &f, batch, layer.ff.fc2);
            add_in_place(&mut x, &f);
        }
        let x = norm(model, &x, model.ids.decoder_norm);
        self.steps += 1;
        Ok(linear(model, &x, batch, model.ids.output))
    }
}

fn linear(model: &Model, x: &[f64], rows: usize, ids: LinearIds) -> Vec<f64> {
    kernels::linear(
        x,
        rows,
        model.params.get(ids.weight).values(),
        model.params.get(ids.bias).values(),
    )
}

fn norm(model: &Model, x: &[f64], ids: NormIds) -> Vec<f64> {
    layer_norm_forward(
        x,
        model.params.get(ids.gain).values(),
        model.params.get(ids.bias).values(),
        LN_EPS,
    )
    .0
}

fn add_in_place(x: &mut [f64], y: &[f64]) {
    for (a, b) in x.iter_mut().zip(y) {
        *a += b;
    }
}

fn append_step(cache: &[f64], new: &[f64], batch: usize, len: usize, d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(batch * (len + 1) * d);
    for b in 0..batch {
        out.extend_from_slice(&cache[b * len * d..(b + 1) * len * d]);
        out.extend_from_slice(&new[b * d..(b + 1) * d]);
    }
    out
}

/// One query row per batch item attending over `keys`/`values` laid out as
/// `[batch, len, d]` (already projected).
fn attend(
    model: &Model,
    ids: &AttentionIds,
    h: &[f64],
    keys: &[f64],
    values: &[f64],
    len: usize,
    key_valid: Option<&[bool]>,
) -> Vec<f64> {
    let cfg = &model.config;
    let (d, heads, dh) = (cfg.d_model, cfg.num_heads, cfg.head_dim());
    let batch = h.len() / d;
    let mut q = linear(model, h, batch, ids.q);
    let inv = 1.0 / (dh as f64).sqrt();
    for v in &mut q {
        *v *= inv;
    }
    let mut ctx = vec![0.0; batch * d];
    let mut scores = vec![0.0; len];
    for b in 0..batch {
        for hd in 0..heads {
            let qh = &q[b * d + hd * dh..b * d + (hd + 1) * dh];
            for (j, s) in scores.iter_mut().enumerate() {
                let allowed = key_valid.is_none_or(|m| m[b * len + j]);
                *s = if allowed {
                    let kh = &keys[(b * len + j) * d + hd * dh..(b * len + j) * d + (hd + 1) * dh];
                    qh.iter().zip(kh).map(|(x, y)| x * y).sum()
                } else {
                    f64::NEG_INFINITY
                };
            }
            kernels::softmax_in_place(&mut scores);
            let out = &mut ctx[b * d + hd * dh..b * d + (hd + 1) * dh];
            for (j, p) in scores.iter().enumerate() {
                let vh = &values[(b * len + j) * d + hd * dh..(b * len + j) * d + (hd + 1) * dh];
                for (o, v) in out.iter_mut().zip(vh) {
                    *o += p * v;
                }
            }
        }
    }
    let o = ids.o;
    let mut out = vec![0.0; batch * d];
    gemm(
        batch,
        d,
        d,
        &ctx,
        false,
        model.params.get(o.weight).values(),
        false,
        &mut out,
        false,
    );
    kernels::add_row_bias(&mut out, model.params.get(o.bias).values());
    out
}
