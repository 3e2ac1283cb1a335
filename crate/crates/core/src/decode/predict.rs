use crate::data::{Example, SymbolUnit, Vocabulary};
use crate::error::Result;
use crate::featenc::{SourceEncoder, UnknownPolicy};
use crate::transformer::Model;

use super::{greedy_decode, DecodeOptions, Prediction};

/// Source column of a predictions file: the source symbols, then the
/// feature bundle after a space when there is one.
pub fn source_label(example: &Example, unit: SymbolUnit) -> String {
    let text = unit.join(&example.source);
    if example.features.is_empty() {
        text
    } else {
        format!("{text} {}", example.features.join(";"))
    }
}

/// Greedy predictions for gold-annotated examples. Symbols missing from the
/// vocabularies are mapped to `<unk>`.
pub fn predict_examples(
    model: &Model,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    examples: &[Example],
    opts: &DecodeOptions,
) -> Result<Vec<Prediction>> {
    let encoder = SourceEncoder::new(model.config.encoding).with_unknown(UnknownPolicy::MapToUnk);
    let sources = examples
        .iter()
        .map(|ex| encoder.encode(&ex.features, &ex.source, src_vocab))
        .collect::<Result<Vec<_>>>()?;
    let decoded = greedy_decode(model, &sources, opts)?;
    Ok(examples
        .iter()
        .zip(decoded)
        .map(|(ex, d)| Prediction {
            source: source_label(ex, SymbolUnit::Characters),
            predicted: tgt_vocab.decode(&d.symbols),
            gold: ex.target.clone(),
        })
        .collect())
}
