//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Parameters are
//! borrowed from a [`ParamStore`] and never copied; [`Graph::backward`] returns
//! a [`Gradients`] value that can be added into the store.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::kernels::{self, LayerNormStats};
use super::{ParamId, ParamStore, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Data {
    Owned(Vec<f64>),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul {
        a: Var,
        b: Var,
        trans_a: bool,
        trans_b: bool,
        batch: usize,
        a_batched: bool,
        b_batched: bool,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(Var, Var),
    AddRow {
        x: Var,
        bias: Var,
    },
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        stats: LayerNormStats,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    Embedding {
        table: Var,
        indices: Vec<usize>,
    },
    Reshape(Var),
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
    Sum(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        ignore_index: usize,
        epsilon: f64,
        probs: Vec<f64>,
        count: usize,
    },
}

struct Node {
    shape: Vec<usize>,
    data: Data,
    op: Op,
    requires_grad: bool,
}

/// Which keys each attention query may see.
///
/// Scores are laid out as `[batch · heads, queries, keys]`. `key_valid`, when
/// present, has `batch · keys` entries and masks padded keys for every head and
/// query of an example. `causal` lets query `i` see keys `j ≤ i + (keys − queries)`.
#[derive(Clone, Debug)]
pub struct AttentionMask {
    pub batch: usize,
    pub heads: usize,
    pub key_valid: Option<Vec<bool>>,
    pub causal: bool,
}

impl AttentionMask {
    fn allows(&self, b: usize, q: usize, k: usize, num_q: usize, num_k: usize) -> bool {
        if self.causal && k + num_q > q + num_k {
            return false;
        }
        match &self.key_valid {
            Some(valid) => valid[b * num_k + k],
            None => true,
        }
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    params: Vec<Option<Vec<f64>>>,
    leaves: Vec<(Var, Vec<f64>)>,
    param_vars: Vec<(Var, ParamId)>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.get(id.0).and_then(|g| g.as_deref())
    }

    /// Gradient with respect to an input leaf or parameter node.
    pub fn wrt(&self, var: Var) -> Option<&[f64]> {
        if let Some((_, id)) = self.param_vars.iter().find(|(v, _)| *v == var) {
            return self.param(*id);
        }
        self.leaves
            .iter()
            .find(|(v, _)| *v == var)
            .map(|(_, g)| g.as_slice())
    }

    /// Adds every parameter gradient into the store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore) -> Result<()> {
        for (i, g) in self.params.iter().enumerate() {
            if let Some(g) = g {
                store.get_mut(ParamId(i)).accumulate_grad(g)?;
            }
        }
        Ok(())
    }
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    training: bool,
    rng: ChaCha8Rng,
}

impl<'p> Graph<'p> {
    /// `training` enables dropout; `rng` drives the dropout masks.
    pub fn new(params: &'p ParamStore, training: bool, rng: ChaCha8Rng) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            training,
            rng,
        }
    }

    /// Hands back the dropout rng so a following graph can continue the stream.
    pub fn into_rng(self) -> ChaCha8Rng {
        self.rng
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match &self.nodes[v.0].data {
            Data::Owned(d) => d,
            Data::Param(id) => self.params.get(*id).values(),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec())
            .expect("node shapes are validated on construction")
    }

    fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.nodes.push(Node {
            shape,
            data: Data::Owned(values),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds a constant (or, with `requires_grad`, a differentiable leaf).
    pub fn input(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        let shape = t.shape().to_vec();
        self.push(shape, t.into_values(), Op::Leaf, rg)
    }

    /// Node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            shape: self.params.get(id).shape().to_vec(),
            data: Data::Param(id),
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn param_by_name(&mut self, name: &str) -> Result<Var> {
        let id = self.params.id(name)?;
        Ok(self.param(id))
    }

    /// Matrix product over the last two axes. Rank-3 operands are batched; a
    /// rank-2 operand (or a batch of one) broadcasts over the other's batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `a · bᵀ` over the last two axes.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, true)
    }

    pub fn matmul_t(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let mismatch = || Error::shape(format!("cannot multiply {sa:?} by {sb:?}"));
        if !(2..=3).contains(&sa.len()) || !(2..=3).contains(&sb.len()) {
            return Err(mismatch());
        }
        let (ba, ra, ca) = batch_dims(&sa);
        let (bb, rb, cb) = batch_dims(&sb);
        let (m, ka) = if trans_a { (ca, ra) } else { (ra, ca) };
        let (kb, n) = if trans_b { (cb, rb) } else { (rb, cb) };
        if ka != kb {
            return Err(mismatch());
        }
        let batch = match (ba, bb) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(mismatch()),
        };
        let a_batched = ba == batch && batch > 1;
        let b_batched = bb == batch && batch > 1;
        let k = ka;
        let mut out = vec![0.0; batch * m * n];
        {
            let av = self.value(a);
            let bv = self.value(b);
            for bi in 0..batch {
                let ao = if a_batched { bi * m * k } else { 0 };
                let bo = if b_batched { bi * k * n } else { 0 };
                kernels::gemm(
                    m,
                    k,
                    n,
                    &av[ao..ao + m * k],
                    trans_a,
                    &bv[bo..bo + k * n],
                    trans_b,
                    &mut out[bi * m * n..(bi + 1) * m * n],
                    false,
                );
            }
        }
        let shape = if sa.len() == 3 || sb.len() == 3 {
            vec![batch, m, n]
        } else {
            vec![m, n]
        };
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(
            shape,
            out,
            Op::MatMul {
                a,
                b,
                trans_a,
                trans_b,
                batch,
                a_batched,
                b_batched,
                m,
                k,
                n,
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "cannot add {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), rg))
    }

    /// Adds a vector to every row (broadcast over all but the last axis).
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let d = *self.shape(x).last().unwrap();
        if self.value(bias).len() != d {
            return Err(Error::shape(format!(
                "bias {:?} does not match last axis of {:?}",
                self.shape(bias),
                self.shape(x)
            )));
        }
        let mut out = self.value(x).to_vec();
        kernels::add_row_bias(&mut out, self.value(bias));
        let rg = self.requires_grad(x) || self.requires_grad(bias);
        Ok(self.push(self.shape(x).to_vec(), out, Op::AddRow { x, bias }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "cannot multiply elementwise {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).iter().map(|v| v * c).collect();
        let rg = self.requires_grad(x);
        self.push(self.shape(x).to_vec(), out, Op::Scale(x, c), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| v.max(0.0)).collect();
        let rg = self.requires_grad(x);
        self.push(self.shape(x).to_vec(), out, Op::Relu(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let rg = self.requires_grad(x);
        self.push(vec![1], vec![s], Op::Sum(x), rg)
    }

    /// Inverted dropout. Identity outside training mode or when `rate == 0`.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !self.training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let out = self
            .value(x)
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let rg = self.requires_grad(x);
        Ok(self.push(self.shape(x).to_vec(), out, Op::Dropout { x, mask }, rg))
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let d = *self.shape(x).last().unwrap();
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(Error::shape(format!(
                "layer norm gain {:?} / bias {:?} vs input {:?}",
                self.shape(gain),
                self.shape(bias),
                self.shape(x)
            )));
        }
        let (out, stats) =
            kernels::layer_norm_forward(self.value(x), self.value(gain), self.value(bias), eps);
        let rg = self.requires_grad(x) || self.requires_grad(gain) || self.requires_grad(bias);
        Ok(self.push(
            self.shape(x).to_vec(),
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                stats,
            },
            rg,
        ))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::invalid(format!("axis {axis} out of range for {shape:?}")));
        }
        let out = kernels::softmax_axis(self.value(x), &shape, axis);
        let rg = self.requires_grad(x);
        Ok(self.push(shape, out, Op::Softmax { x, axis }, rg))
    }

    /// Softmax over the last axis of `[batch·heads, queries, keys]` scores with
    /// disallowed keys forced to `-inf`.
    pub fn masked_softmax(&mut self, scores: Var, mask: &AttentionMask) -> Result<Var> {
        let shape = self.shape(scores).to_vec();
        if shape.len() != 3 || shape[0] != mask.batch * mask.heads {
            return Err(Error::shape(format!(
                "scores {shape:?} do not match mask of batch {} × heads {}",
                mask.batch, mask.heads
            )));
        }
        let (nq, nk) = (shape[1], shape[2]);
        if let Some(valid) = &mask.key_valid {
            if valid.len() != mask.batch * nk {
                return Err(Error::shape(format!(
                    "key mask of length {} for batch {} × keys {nk}",
                    valid.len(),
                    mask.batch
                )));
            }
        }
        let mut out = self.value(scores).to_vec();
        for (r, row) in out.chunks_exact_mut(nk).enumerate() {
            let bh = r / nq;
            let q = r % nq;
            let b = bh / mask.heads;
            let mut any = false;
            for (k, v) in row.iter_mut().enumerate() {
                if mask.allows(b, q, k, nq, nk) {
                    any = true;
                } else {
                    *v = f64::NEG_INFINITY;
                }
            }
            if !any {
                return Err(Error::invalid(format!(
                    "every key is masked for query {q} of batch item {b}"
                )));
            }
            kernels::softmax_in_place(row);
        }
        let rg = self.requires_grad(scores);
        Ok(self.push(shape, out, Op::Softmax { x: scores, axis: 2 }, rg))
    }

    /// Gathers rows of a `[vocab, d]` table.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(Error::shape(format!("embedding table must be rank 2, got {shape:?}")));
        }
        let (vocab, d) = (shape[0], shape[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= vocab) {
            return Err(Error::invalid(format!("index {bad} outside vocabulary of {vocab}")));
        }
        if indices.is_empty() {
            return Err(Error::invalid("empty embedding lookup"));
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let rg = self.requires_grad(table);
        Ok(self.push(
            vec![indices.len(), d],
            out,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() || shape.contains(&0) {
            return Err(Error::shape(format!(
                "cannot reshape {:?} to {shape:?}",
                self.shape(x)
            )));
        }
        let out = self.value(x).to_vec();
        let rg = self.requires_grad(x);
        Ok(self.push(shape.to_vec(), out, Op::Reshape(x), rg))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::shape(format!("invalid permutation {axes:?} of {shape:?}")));
        }
        let (out, out_shape) = kernels::permute(self.value(x), &shape, axes);
        let rg = self.requires_grad(x);
        Ok(self.push(
            out_shape,
            out,
            Op::Permute {
                x,
                axes: axes.to_vec(),
            },
            rg,
        ))
    }

    /// Mean cross-entropy of `[positions, vocab]` logits against targets
    /// smoothed as `q = (1 − ε)·onehot + ε/V`. Positions whose target equals
    /// `ignore_index` are excluded.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        epsilon: f64,
        ignore_index: usize,
    ) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != targets.len() {
            return Err(Error::shape(format!(
                "logits {shape:?} for {} targets",
                targets.len()
            )));
        }
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::invalid(format!("label smoothing {epsilon} outside [0, 1]")));
        }
        let vocab = shape[1];
        let lv = self.value(logits);
        let mut probs = vec![0.0; lv.len()];
        let mut total = 0.0;
        let mut count = 0;
        for (i, &t) in targets.iter().enumerate() {
            if t == ignore_index {
                continue;
            }
            if t >= vocab {
                return Err(Error::invalid(format!(
                    "target {t} outside vocabulary of {vocab}"
                )));
            }
            let row = &lv[i * vocab..(i + 1) * vocab];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            let mut sum_logp = 0.0;
            for (k, &v) in row.iter().enumerate() {
                let logp = v - lse;
                sum_logp += logp;
                probs[i * vocab + k] = logp.exp();
            }
            let gold = row[t] - lse;
            total -= (1.0 - epsilon) * gold + epsilon / vocab as f64 * sum_logp;
            count += 1;
        }
        if count == 0 {
            return Err(Error::invalid("every target position is ignored"));
        }
        let rg = self.requires_grad(logits);
        Ok(self.push(
            vec![1],
            vec![total / count as f64],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore_index,
                epsilon,
                probs,
                count,
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients {
            params: vec![None; self.params.len()],
            leaves: Vec::new(),
            param_vars: Vec::new(),
        };
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => out.leaves.push((Var(i), g)),
                Op::Param(id) => {
                    out.param_vars.push((Var(i), *id));
                    out.params[id.0] = Some(g);
                }
                op => self.backward_op(op, &node.shape, i, &g, &mut grads),
            }
        }
        Ok(out)
    }

    fn backward_op(
        &self,
        op: &Op,
        _shape: &[usize],
        index: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let out_value = self.value(Var(index));
        match op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::MatMul {
                a,
                b,
                trans_a,
                trans_b,
                batch,
                a_batched,
                b_batched,
                m,
                k,
                n,
            } => {
                let (m, k, n) = (*m, *k, *n);
                let (ta, tb) = (*trans_a, *trans_b);
                let av = self.value(*a);
                let bv = self.value(*b);
                if self.requires_grad(*a) {
                    let ga = grad_buf(grads, *a, av.len());
                    for bi in 0..*batch {
                        let ao = if *a_batched { bi * m * k } else { 0 };
                        let bo = if *b_batched { bi * k * n } else { 0 };
                        let gc = &g[bi * m * n..(bi + 1) * m * n];
                        let bs = &bv[bo..bo + k * n];
                        let dst = &mut ga[ao..ao + m * k];
                        if ta {
                            kernels::gemm(k, n, m, bs, tb, gc, true, dst, true);
                        } else {
                            kernels::gemm(m, n, k, gc, false, bs, !tb, dst, true);
                        }
                    }
                }
                if self.requires_grad(*b) {
                    let gb = grad_buf(grads, *b, bv.len());
                    for bi in 0..*batch {
                        let ao = if *a_batched { bi * m * k } else { 0 };
                        let bo = if *b_batched { bi * k * n } else { 0 };
                        let gc = &g[bi * m * n..(bi + 1) * m * n];
                        let as_ = &av[ao..ao + m * k];
                        let dst = &mut gb[bo..bo + k * n];
                        if tb {
                            kernels::gemm(n, m, k, gc, true, as_, ta, dst, true);
                        } else {
                            kernels::gemm(k, m, n, as_, !ta, gc, false, dst, true);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.requires_grad(v) {
                        add_into(grad_buf(grads, v, g.len()), g);
                    }
                }
            }
            Op::AddRow { x, bias } => {
                if self.requires_grad(*x) {
                    add_into(grad_buf(grads, *x, g.len()), g);
                }
                if self.requires_grad(*bias) {
                    let d = self.value(*bias).len();
                    let gb = grad_buf(grads, *bias, d);
                    for row in g.chunks_exact(d) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let ga = grad_buf(grads, *a, g.len());
                    for ((d, gi), bi) in ga.iter_mut().zip(g).zip(bv) {
                        *d += gi * bi;
                    }
                }
                if self.requires_grad(*b) {
                    let gb = grad_buf(grads, *b, g.len());
                    for ((d, gi), ai) in gb.iter_mut().zip(g).zip(av) {
                        *d += gi * ai;
                    }
                }
            }
            Op::Scale(x, c) => {
                let gx = grad_buf(grads, *x, g.len());
                for (d, gi) in gx.iter_mut().zip(g) {
                    *d += gi * c;
                }
            }
            Op::Relu(x) => {
                let gx = grad_buf(grads, *x, g.len());
                for ((d, gi), y) in gx.iter_mut().zip(g).zip(out_value) {
                    if *y > 0.0 {
                        *d += gi;
                    }
                }
            }
            Op::Dropout { x, mask } => {
                let gx = grad_buf(grads, *x, g.len());
                for ((d, gi), mi) in gx.iter_mut().zip(g).zip(mask) {
                    *d += gi * mi;
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                stats,
            } => {
                let xv = self.value(*x);
                let gv = self.value(*gain);
                let dim = gv.len();
                let rows = xv.len() / dim;
                let mut dgain = vec![0.0; dim];
                let mut dbias = vec![0.0; dim];
                let mut dx = vec![0.0; xv.len()];
                let mut xhat = vec![0.0; dim];
                let mut dxhat = vec![0.0; dim];
                for r in 0..rows {
                    let xr = &xv[r * dim..(r + 1) * dim];
                    let gr = &g[r * dim..(r + 1) * dim];
                    let (mu, rs) = (stats.mean[r], stats.rstd[r]);
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    for j in 0..dim {
                        xhat[j] = (xr[j] - mu) * rs;
                        dxhat[j] = gr[j] * gv[j];
                        dgain[j] += gr[j] * xhat[j];
                        dbias[j] += gr[j];
                        mean_dxhat += dxhat[j];
                        mean_dxhat_xhat += dxhat[j] * xhat[j];
                    }
                    mean_dxhat /= dim as f64;
                    mean_dxhat_xhat /= dim as f64;
                    let dr = &mut dx[r * dim..(r + 1) * dim];
                    for j in 0..dim {
                        dr[j] = rs * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                    }
                }
                if self.requires_grad(*x) {
                    add_into(grad_buf(grads, *x, dx.len()), &dx);
                }
                if self.requires_grad(*gain) {
                    add_into(grad_buf(grads, *gain, dim), &dgain);
                }
                if self.requires_grad(*bias) {
                    add_into(grad_buf(grads, *bias, dim), &dbias);
                }
            }
            Op::Softmax { x, axis } => {
                let shape = &self.nodes[index].shape;
                let (outer, len, inner) = kernels::split_axis(shape, *axis);
                let gx = grad_buf(grads, *x, g.len());
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let dot: f64 = (0..len)
                            .map(|j| g[base + j * inner] * out_value[base + j * inner])
                            .sum();
                        for j in 0..len {
                            let p = base + j * inner;
                            gx[p] += out_value[p] * (g[p] - dot);
                        }
                    }
                }
            }
            Op::Embedding { table, indices } => {
                let d = self.shape(*table)[1];
                let gt = grad_buf(grads, *table, self.value(*table).len());
                for (r, &i) in indices.iter().enumerate() {
                    add_into(&mut gt[i * d..(i + 1) * d], &g[r * d..(r + 1) * d]);
                }
            }
            Op::Reshape(x) => add_into(grad_buf(grads, *x, g.len()), g),
            Op::Permute { x, axes } => {
                let shape = &self.nodes[index].shape;
                let (back, _) = kernels::permute(g, shape, &kernels::inverse_axes(axes));
                add_into(grad_buf(grads, *x, g.len()), &back);
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                for d in grad_buf(grads, *x, n) {
                    *d += g[0];
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                ignore_index,
                epsilon,
                probs,
                count,
            } => {
                let vocab = self.shape(*logits)[1];
                let scale = g[0] / *count as f64;
                let uniform = epsilon / vocab as f64;
                let gl = grad_buf(grads, *logits, probs.len());
                for (i, &t) in targets.iter().enumerate() {
                    if t == *ignore_index {
                        continue;
                    }
                    let row = &mut gl[i * vocab..(i + 1) * vocab];
                    for (k, d) in row.iter_mut().enumerate() {
                        let q = uniform + if k == t { 1.0 - epsilon } else { 0.0 };
                        *d += scale * (probs[i * vocab + k] - q);
                    }
                }
            }
        }
    }
}

fn batch_dims(shape: &[usize]) -> (usize, usize, usize) {
    match shape {
        [r, c] => (1, *r, *c),
        [b, r, c] => (*b, *r, *c),
        _ => unreachable!(),
    }
}

fn grad_buf(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
