//! Parameter names, shapes, initialization and counting.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::featenc::EncodingMode;
use crate::numerics::{ParamId, ParamStore, Tensor};

use super::TransformerConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinearIds {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NormIds {
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionIds {
    pub q: LinearIds,
    pub k: LinearIds,
    pub v: LinearIds,
    pub o: LinearIds,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeedForwardIds {
    pub fc1: LinearIds,
    pub fc2: LinearIds,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderLayerIds {
    pub self_attn_norm: NormIds,
    pub self_attn: AttentionIds,
    pub ff_norm: NormIds,
    pub ff: FeedForwardIds,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoderLayerIds {
    pub self_attn_norm: NormIds,
    pub self_attn: AttentionIds,
    pub cross_attn_norm: NormIds,
    pub cross_attn: AttentionIds,
    pub ff_norm: NormIds,
    pub ff: FeedForwardIds,
}

/// Resolved handles for every parameter of a [`super::Model`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamIds {
    pub src_embed: ParamId,
    pub tgt_embed: ParamId,
    pub type_embed: Option<ParamId>,
    pub encoder: Vec<EncoderLayerIds>,
    pub encoder_norm: NormIds,
    pub decoder: Vec<DecoderLayerIds>,
    pub decoder_norm: NormIds,
    pub output: LinearIds,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    Xavier,
    Zeros,
    Ones,
}

/// Walks the parameter layout in a fixed order. `init` both creates fresh
/// parameters and resolves existing ones so the two can never disagree.
enum Walker<'a> {
    Init {
        store: &'a mut ParamStore,
        rng: &'a mut ChaCha8Rng,
    },
    Resolve(&'a ParamStore),
}

impl Walker<'_> {
    fn param(&mut self, name: String, shape: &[usize], init: Init) -> Result<ParamId> {
        match self {
            Walker::Init { store, rng } => {
                let t = match init {
                    Init::Zeros => Tensor::zeros(shape),
                    Init::Ones => Tensor::filled(shape, 1.0),
                    Init::Xavier => {
                        let a = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                        Tensor::from_fn(shape, |_| rng.gen_range(-a..a))
                    }
                };
                store.insert(name, t)
            }
            Walker::Resolve(store) => {
                let id = store.id(&name)?;
                let found = store.get(id).shape();
                if found != shape {
                    return Err(Error::shape(format!(
                        "parameter {name} has shape {found:?}, config implies {shape:?}"
                    )));
                }
                Ok(id)
            }
        }
    }

    fn linear(&mut self, prefix: &str, d_in: usize, d_out: usize) -> Result<LinearIds> {
        Ok(LinearIds {
            weight: self.param(format!("{prefix}.weight"), &[d_in, d_out], Init::Xavier)?,
            bias: self.param(format!("{prefix}.bias"), &[d_out], Init::Zeros)?,
        })
    }

    fn norm(&mut self, prefix: &str, d: usize) -> Result<NormIds> {
        Ok(NormIds {
            gain: self.param(format!("{prefix}.gain"), &[d], Init::Ones)?,
            bias: self.param(format!("{prefix}.bias"), &[d], Init::Zeros)?,
        })
    }

    fn attention(&mut self, prefix: &str, d: usize) -> Result<AttentionIds> {
        Ok(AttentionIds {
            q: self.linear(&format!("{prefix}.q"), d, d)?,
            k: self.linear(&format!("{prefix}.k"), d, d)?,
            v: self.linear(&format!("{prefix}.v"), d, d)?,
            o: self.linear(&format!("{prefix}.o"), d, d)?,
        })
    }

    fn feed_forward(&mut self, prefix: &str, d: usize, d_ff: usize) -> Result<FeedForwardIds> {
        Ok(FeedForwardIds {
            fc1: self.linear(&format!("{prefix}.fc1"), d, d_ff)?,
            fc2: self.linear(&format!("{prefix}.fc2"), d_ff, d)?,
        })
    }

    fn walk(&mut self, cfg: &TransformerConfig) -> Result<ParamIds> {
        let d = cfg.d_model;
        let src_embed = self.param("src_embed.weight".into(), &[cfg.src_vocab_size, d], Init::Xavier)?;
        let tgt_embed = self.param("tgt_embed.weight".into(), &[cfg.tgt_vocab_size, d], Init::Xavier)?;
        let type_embed = match cfg.encoding {
            EncodingMode::FeatureInvariant => {
                Some(self.param("type_embed.weight".into(), &[2, d], Init::Xavier)?)
            }
            EncodingMode::Vanilla => None,
        };
        let mut encoder = Vec::with_capacity(cfg.num_layers);
        for i in 0..cfg.num_layers {
            let p = format!("encoder.layer{i}");
            encoder.push(EncoderLayerIds {
                self_attn_norm: self.norm(&format!("{p}.self_attn_norm"), d)?,
                self_attn: self.attention(&format!("{p}.self_attn"), d)?,
                ff_norm: self.norm(&format!("{p}.ff_norm"), d)?,
                ff: self.feed_forward(&format!("{p}.ff"), d, cfg.d_ff)?,
            });
        }
        let encoder_norm = self.norm("encoder.final_norm", d)?;
        let mut decoder = Vec::with_capacity(cfg.num_layers);
        for i in 0..cfg.num_layers {
            let p = format!("decoder.layer{i}");
            decoder.push(DecoderLayerIds {
                self_attn_norm: self.norm(&format!("{p}.self_attn_norm"), d)?,
                self_attn: self.attention(&format!("{p}.self_attn"), d)?,
                cross_attn_norm: self.norm(&format!("{p}.cross_attn_norm"), d)?,
                cross_attn: self.attention(&format!("{p}.cross_attn"), d)?,
                ff_norm: self.norm(&format!("{p}.ff_norm"), d)?,
                ff: self.feed_forward(&format!("{p}.ff"), d, cfg.d_ff)?,
            });
        }
        let decoder_norm = self.norm("decoder.final_norm", d)?;
        let output = self.linear("output", d, cfg.tgt_vocab_size)?;
        Ok(ParamIds {
            src_embed,
            tgt_embed,
            type_embed,
            encoder,
            encoder_norm,
            decoder,
            decoder_norm,
            output,
        })
    }
}

pub(super) fn init_params(
    cfg: &TransformerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(ParamStore, ParamIds)> {
    let mut store = ParamStore::new();
    let ids = Walker::Init {
        store: &mut store,
        rng,
    }
    .walk(cfg)?;
    Ok((store, ids))
}

pub(super) fn resolve_ids(cfg: &TransformerConfig, params: &ParamStore) -> Result<ParamIds> {
    let ids = Walker::Resolve(params).walk(cfg)?;
    let expected = expected_len(cfg);
    if params.len() != expected {
        return Err(Error::shape(format!(
            "store holds {} parameters, config implies {expected}",
            params.len()
        )));
    }
    Ok(ids)
}

fn expected_len(cfg: &TransformerConfig) -> usize {
    let type_embed = usize::from(cfg.encoding == EncodingMode::FeatureInvariant);
    // embeddings + (enc 2 norms·2 + 6 linears·2) + (dec 3·2 + 10·2) + 2 final norms·2 + output·2
    2 + type_embed + cfg.num_layers * (4 + 12) + cfg.num_layers * (6 + 20) + 4 + 2
}

/// Parameter groups used by [`count_parameters`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    /// Encoder and decoder layers, without embeddings, the output projection
    /// or the final layer norms.
    LayerStack,
    /// Source, target and type embeddings.
    Embeddings,
    Output,
    FinalNorms,
    All,
}

impl Scope {
    pub fn of(name: &str) -> Scope {
        if name.starts_with("encoder.layer") || name.starts_with("decoder.layer") {
            Scope::LayerStack
        } else if name.contains("final_norm") {
            Scope::FinalNorms
        } else if name.starts_with("output.") {
            Scope::Output
        } else {
            Scope::Embeddings
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParameterCounts {
    pub total: usize,
    pub layer_stack: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub embeddings: usize,
    pub output: usize,
    pub final_norms: usize,
}

impl ParameterCounts {
    pub fn scope(&self, scope: Scope) -> usize {
        match scope {
            Scope::LayerStack => self.layer_stack,
            Scope::Embeddings => self.embeddings,
            Scope::Output => self.output,
            Scope::FinalNorms => self.final_norms,
            Scope::All => self.total,
        }
    }
}

pub fn count_parameters(params: &ParamStore) -> ParameterCounts {
    let mut c = ParameterCounts::default();
    for (_, name, t) in params.iter() {
        let n = t.numel();
        c.total += n;
        match Scope::of(name) {
            Scope::LayerStack => {
                c.layer_stack += n;
                if name.starts_with("encoder.") {
                    c.encoder_layers += n;
                } else {
                    c.decoder_layers += n;
                }
            }
            Scope::Embeddings => c.embeddings += n,
            Scope::Output => c.output += n,
            Scope::FinalNorms => c.final_norms += n,
            Scope::All => unreachable!(),
        }
    }
    c
}
