//! Differentiable forward pass on a [`Graph`].

use crate::data::vocab::PAD;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::featenc::{embed_source, position_rows, SourceBatch};
use crate::numerics::{AttentionMask, Graph, Var};

use super::layout::{AttentionIds, FeedForwardIds, LinearIds, NormIds};
use super::Model;

pub(crate) const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Replace every cross-attention output with zeros (structural tests).
    pub ablate_cross_attention: bool,
}

impl Model {
    fn linear(&self, g: &mut Graph<'_>, x: Var, ids: LinearIds) -> Result<Var> {
        let w = g.param(ids.weight);
        let b = g.param(ids.bias);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }

    fn norm(&self, g: &mut Graph<'_>, x: Var, ids: NormIds) -> Result<Var> {
        let gain = g.param(ids.gain);
        let bias = g.param(ids.bias);
        g.layer_norm(x, gain, bias, LN_EPS)
    }

    fn feed_forward(&self, g: &mut Graph<'_>, x: Var, ids: FeedForwardIds) -> Result<Var> {
        let h = self.linear(g, x, ids.fc1)?;
        let h = g.relu(h);
        self.linear(g, h, ids.fc2)
    }

    /// `[batch·len, d]` → `[batch·heads, len, head_dim]`.
    fn split_heads(&self, g: &mut Graph<'_>, x: Var, batch: usize, len: usize) -> Result<Var> {
        let (h, dh) = (self.config.num_heads, self.config.head_dim());
        let x = g.reshape(x, &[batch, len, h, dh])?;
        let x = g.permute(x, &[0, 2, 1, 3])?;
        g.reshape(x, &[batch * h, len, dh])
    }

    fn merge_heads(&self, g: &mut Graph<'_>, x: Var, batch: usize, len: usize) -> Result<Var> {
        let (h, dh) = (self.config.num_heads, self.config.head_dim());
        let x = g.reshape(x, &[batch, h, len, dh])?;
        let x = g.permute(x, &[0, 2, 1, 3])?;
        g.reshape(x, &[batch * len, h * dh])
    }

    /// Multi-head scaled dot-product attention of `queries` (`[batch·tq, d]`)
    /// over `keys_values` (`[batch·tk, d]`).
    #[allow(clippy::too_many_arguments)]
    pub fn multi_head_attention(
        &self,
        g: &mut Graph<'_>,
        ids: &AttentionIds,
        queries: Var,
        keys_values: Var,
        tq: usize,
        tk: usize,
        mask: &AttentionMask,
    ) -> Result<Var> {
        let batch = mask.batch;
        let q = self.linear(g, queries, ids.q)?;
        let q = g.scale(q, 1.0 / (self.config.head_dim() as f64).sqrt());
        let k = self.linear(g, keys_values, ids.k)?;
        let v = self.linear(g, keys_values, ids.v)?;
        let q = self.split_heads(g, q, batch, tq)?;
        let k = self.split_heads(g, k, batch, tk)?;
        let v = self.split_heads(g, v, batch, tk)?;
        let scores = g.matmul_nt(q, k)?;
        let probs = g.masked_softmax(scores, mask)?;
        let probs = g.dropout(probs, self.config.dropout_rate)?;
        let ctx = g.matmul(probs, v)?;
        let ctx = self.merge_heads(g, ctx, batch, tq)?;
        self.linear(g, ctx, ids.o)
    }

    /// Encoder output `[batch·src_len, d_model]` after the final layer norm.
    pub fn encode(&self, g: &mut Graph<'_>, src: &SourceBatch) -> Result<Var> {
        let rate = self.config.dropout_rate;
        let mut x = embed_source(g, src, self)?;
        let mask = AttentionMask {
            batch: src.batch,
            heads: self.config.num_heads,
            key_valid: Some(src.mask.clone()),
            causal: false,
        };
        for layer in &self.ids.encoder {
            let h = self.norm(g, x, layer.self_attn_norm)?;
            let a = self.multi_head_attention(g, &layer.self_attn, h, h, src.len, src.len, &mask)?;
            let a = g.dropout(a, rate)?;
            x = g.add(x, a)?;
            let h = self.norm(g, x, layer.ff_norm)?;
            let f = self.feed_forward(g, h, layer.ff)?;
            let f = g.dropout(f, rate)?;
            x = g.add(x, f)?;
        }
        self.norm(g, x, self.ids.encoder_norm)
    }

    /// Target embeddings at positions `1..=tgt_len`.
    fn embed_target(&self, g: &mut Graph<'_>, tgt_in: &[usize], tgt_len: usize) -> Result<Var> {
        let d = self.config.d_model;
        if tgt_len >= self.config.max_positions {
            return Err(Error::invalid(format!(
                "target prefix of length {tgt_len} exceeds max_positions {}",
                self.config.max_positions
            )));
        }
        let table = g.param(self.ids.tgt_embed);
        let emb = g.embedding(table, tgt_in)?;
        let emb = g.scale(emb, (d as f64).sqrt());
        let positions: Vec<usize> = (0..tgt_in.len()).map(|i| i % tgt_len + 1).collect();
        let pe = g.input(position_rows(&self.positions, &positions, d));
        let x = g.add(emb, pe)?;
        g.dropout(x, self.config.dropout_rate)
    }

    /// Logits `[batch·tgt_len, tgt_vocab]` for BOS-prefixed target inputs laid
    /// out as `[batch, tgt_len]`.
    pub fn decode(
        &self,
        g: &mut Graph<'_>,
        tgt_in: &[usize],
        tgt_len: usize,
        memory: Var,
        src: &SourceBatch,
        opts: ForwardOptions,
    ) -> Result<Var> {
        let batch = src.batch;
        if tgt_len == 0 || tgt_in.len() != batch * tgt_len {
            return Err(Error::shape(format!(
                "{} target ids for batch {batch} × length {tgt_len}",
                tgt_in.len()
            )));
        }
        let rate = self.config.dropout_rate;
        let heads = self.config.num_heads;
        let self_mask = AttentionMask {
            batch,
            heads,
            key_valid: None,
            causal: true,
        };
        let cross_mask = AttentionMask {
            batch,
            heads,
            key_valid: Some(src.mask.clone()),
            causal: false,
        };
        let mut x = self.embed_target(g, tgt_in, tgt_len)?;
        for layer in &self.ids.decoder {
            let h = self.norm(g, x, layer.self_attn_norm)?;
            let a = self.multi_head_attention(g, &layer.self_attn, h, h, tgt_len, tgt_len, &self_mask)?;
            let a = g.dropout(a, rate)?;
            x = g.add(x, a)?;
            if !opts.ablate_cross_attention {
                let h = self.norm(g, x, layer.cross_attn_norm)?;
                let c = self.multi_head_attention(g, &layer.cross_attn, h, memory, tgt_len, src.len, &cross_mask)?;
                let c = g.dropout(c, rate)?;
                x = g.add(x, c)?;
            }
            let h = self.norm(g, x, layer.ff_norm)?;
            let f = self.feed_forward(g, h, layer.ff)?;
            let f = g.dropout(f, rate)?;
            x = g.add(x, f)?;
        }
        let x = self.norm(g, x, self.ids.decoder_norm)?;
        self.linear(g, x, self.ids.output)
    }

    /// Teacher-forced logits for a batch.
    pub fn logits(&self, g: &mut Graph<'_>, batch: &Batch) -> Result<Var> {
        let memory = self.encode(g, &batch.source)?;
        self.decode(g, &batch.tgt_in, batch.tgt_len, memory, &batch.source, ForwardOptions::default())
    }

    /// Label-smoothed cross-entropy over the non-padding target positions.
    pub fn loss(&self, g: &mut Graph<'_>, batch: &Batch, label_smoothing: f64) -> Result<Var> {
        let logits = self.logits(g, batch)?;
        g.cross_entropy(logits, &batch.tgt_out, label_smoothing, PAD)
    }
}
