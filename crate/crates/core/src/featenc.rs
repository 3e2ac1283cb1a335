//! Typed source tokens.
//!
//! In feature-invariant mode every feature token sits at position 0 and the
//! characters count from 1, so the distance between a character and any
//! feature is the character's own index whatever the number or order of the
//! features. A learned type embedding tells features and characters apart.
//! Vanilla mode numbers all tokens consecutively from 0 and adds no type
//! embedding.

use serde::{Deserialize, Serialize};

use crate::data::vocab::{Vocabulary, UNK};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};
use crate::transformer::{Model, PositionTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenType {
    Feature = 0,
    Character = 1,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingMode {
    #[default]
    FeatureInvariant,
    Vanilla,
}

impl std::str::FromStr for EncodingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feature_invariant" | "feature-invariant" | "invariant" => {
                Ok(EncodingMode::FeatureInvariant)
            }
            "vanilla" => Ok(EncodingMode::Vanilla),
            other => Err(Error::invalid(format!("unknown encoder mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for EncodingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EncodingMode::FeatureInvariant => "feature_invariant",
            EncodingMode::Vanilla => "vanilla",
        })
    }
}

/// Where feature tokens go relative to the characters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturePlacement {
    #[default]
    Prepend,
    Append,
}

/// What to do with symbols missing from the vocabulary.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum UnknownPolicy {
    #[default]
    Reject,
    MapToUnk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceToken {
    pub symbol_id: usize,
    pub token_type: TokenType,
    pub position_index: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedSource {
    pub tokens: Vec<SourceToken>,
    pub mode: EncodingMode,
}

impl EncodedSource {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn char_count(&self) -> usize {
        self.tokens
            .iter()
            .filter(|t| t.token_type == TokenType::Character)
            .count()
    }

    pub fn positions(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.position_index).collect()
    }

    /// Checks the layout invariants of the encoding mode.
    pub fn validate(&self) -> Result<()> {
        match self.mode {
            EncodingMode::FeatureInvariant => {
                let mut next_char = 1;
                for t in &self.tokens {
                    match t.token_type {
                        TokenType::Feature if t.position_index != 0 => {
                            return Err(Error::Invariant(
                                "feature token with nonzero position".into(),
                            ))
                        }
                        TokenType::Feature => {}
                        TokenType::Character => {
                            if t.position_index != next_char {
                                return Err(Error::Invariant(format!(
                                    "character at position {} where {next_char} was expected",
                                    t.position_index
                                )));
                            }
                            next_char += 1;
                        }
                    }
                }
            }
            EncodingMode::Vanilla => {
                if self.tokens.iter().enumerate().any(|(i, t)| t.position_index != i) {
                    return Err(Error::Invariant(
                        "vanilla positions must count from 0".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Turns feature and character strings into an [`EncodedSource`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SourceEncoder {
    pub mode: EncodingMode,
    pub placement: FeaturePlacement,
    pub unknown: UnknownPolicy,
}

impl SourceEncoder {
    pub fn new(mode: EncodingMode) -> Self {
        SourceEncoder {
            mode,
            ..Default::default()
        }
    }

    pub fn with_unknown(mut self, unknown: UnknownPolicy) -> Self {
        self.unknown = unknown;
        self
    }

    pub fn with_placement(mut self, placement: FeaturePlacement) -> Self {
        self.placement = placement;
        self
    }

    pub fn encode(
        &self,
        features: &[String],
        characters: &[String],
        vocab: &Vocabulary,
    ) -> Result<EncodedSource> {
        let resolve = |found: Option<usize>, text: &str| match (found, self.unknown) {
            (Some(i), _) => Ok(i),
            (None, UnknownPolicy::MapToUnk) => Ok(UNK),
            (None, UnknownPolicy::Reject) => Err(Error::UnknownSymbol(text.to_string())),
        };
        let feats = features
            .iter()
            .map(|f| resolve(vocab.feature_index(f), f))
            .collect::<Result<Vec<_>>>()?;
        let chars = characters
            .iter()
            .map(|c| resolve(vocab.char_index(c), c))
            .collect::<Result<Vec<_>>>()?;

        let feat_tokens = feats.into_iter().map(|id| (id, TokenType::Feature));
        let char_tokens = chars.into_iter().map(|id| (id, TokenType::Character));
        let ordered: Vec<(usize, TokenType)> = match self.placement {
            FeaturePlacement::Prepend => feat_tokens.chain(char_tokens).collect(),
            FeaturePlacement::Append => char_tokens.chain(feat_tokens).collect(),
        };

        let mut next_char = 1;
        let tokens = ordered
            .into_iter()
            .enumerate()
            .map(|(i, (symbol_id, token_type))| {
                let position_index = match (self.mode, token_type) {
                    (EncodingMode::Vanilla, _) => i,
                    (EncodingMode::FeatureInvariant, TokenType::Feature) => 0,
                    (EncodingMode::FeatureInvariant, TokenType::Character) => {
                        next_char += 1;
                        next_char - 1
                    }
                };
                SourceToken {
                    symbol_id,
                    token_type,
                    position_index,
                }
            })
            .collect();
        Ok(EncodedSource {
            tokens,
            mode: self.mode,
        })
    }
}

/// Feature-invariant encoding with prepended features; unknown symbols are
/// an error.
pub fn build_source(
    features: &[String],
    characters: &[String],
    vocab: &Vocabulary,
) -> Result<EncodedSource> {
    SourceEncoder::default().encode(features, characters, vocab)
}

/// Padded source batch laid out row-major as `[batch, len]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceBatch {
    pub batch: usize,
    pub len: usize,
    pub ids: Vec<usize>,
    pub positions: Vec<usize>,
    pub types: Vec<TokenType>,
    pub mask: Vec<bool>,
}

impl SourceBatch {
    pub fn from_sources<'a>(sources: impl IntoIterator<Item = &'a EncodedSource>) -> Result<Self> {
        let sources: Vec<&EncodedSource> = sources.into_iter().collect();
        if sources.is_empty() {
            return Err(Error::invalid("empty source batch"));
        }
        if let Some(i) = sources.iter().position(|s| s.is_empty()) {
            return Err(Error::invalid(format!("source {i} has no tokens")));
        }
        let batch = sources.len();
        let len = sources.iter().map(|s| s.len()).max().unwrap();
        let mut out = SourceBatch {
            batch,
            len,
            ids: vec![crate::data::vocab::PAD; batch * len],
            positions: vec![0; batch * len],
            types: vec![TokenType::Character; batch * len],
            mask: vec![false; batch * len],
        };
        for (b, s) in sources.iter().enumerate() {
            for (j, t) in s.tokens.iter().enumerate() {
                let p = b * len + j;
                out.ids[p] = t.symbol_id;
                out.positions[p] = t.position_index;
                out.types[p] = t.token_type;
                out.mask[p] = true;
            }
        }
        Ok(out)
    }

    /// Unpadded token ids of row `b`.
    pub fn row_ids(&self, b: usize) -> Vec<usize> {
        (0..self.len)
            .filter(|&j| self.mask[b * self.len + j])
            .map(|j| self.ids[b * self.len + j])
            .collect()
    }
}

/// Source embeddings `symbol·√d + PE(position) (+ type)` followed by
/// embedding dropout. Returns a `[batch·len, d_model]` node.
pub fn embed_source(graph: &mut Graph<'_>, src: &SourceBatch, model: &Model) -> Result<Var> {
    let cfg = &model.config;
    let d = cfg.d_model;
    if let Some(&p) = src.positions.iter().max() {
        if p >= cfg.max_positions {
            return Err(Error::invalid(format!(
                "source position {p} exceeds max_positions {}",
                cfg.max_positions
            )));
        }
    }
    let table = graph.param(model.ids.src_embed);
    let emb = graph.embedding(table, &src.ids)?;
    let emb = graph.scale(emb, (d as f64).sqrt());
    let pe = graph.input(position_rows(&model.positions, &src.positions, d));
    let mut x = graph.add(emb, pe)?;
    if let (EncodingMode::FeatureInvariant, Some(type_id)) = (cfg.encoding, model.ids.type_embed) {
        let types: Vec<usize> = src.types.iter().map(|&t| t as usize).collect();
        let type_table = graph.param(type_id);
        let te = graph.embedding(type_table, &types)?;
        x = graph.add(x, te)?;
    }
    graph.dropout(x, cfg.dropout_rate)
}

pub(crate) fn position_rows(table: &PositionTable, positions: &[usize], d: usize) -> Tensor {
    let mut values = Vec::with_capacity(positions.len() * d);
    for &p in positions {
        values.extend_from_slice(table.row(p));
    }
    Tensor::new(vec![positions.len(), d], values).expect("position rows match d_model")
}
