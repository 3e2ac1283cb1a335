//! Examples, task readers, vocabularies, batching and synthetic data.

mod batch;
mod io;
mod synthetic;
pub mod vocab;

pub use batch::{encode_examples, epoch_order, make_batches, Batch, EncodedExample};
pub use io::{
    parse_inflection_tsv, parse_pair_tsv, read_inflection_tsv, read_pair_tsv, read_task,
    write_inflection_tsv, write_pair_tsv, write_task, SymbolUnit, Task,
};
pub use synthetic::{
    gen_synthetic_inflection, permute_features, Edit, LemmaShape, Rule, RuleTable, SyntheticConfig,
    SyntheticSplits,
};
pub use vocab::{build_vocab, Symbol, SymbolKind, Vocabulary};

/// One transduction pair. Symbols are unicode scalar values, except on the
/// target side of phoneme data where each space-separated phoneme is one
/// symbol.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Example {
    pub source: Vec<String>,
    pub features: Vec<String>,
    pub target: Vec<String>,
}

impl Example {
    pub fn from_strs(source: &str, features: &[&str], target: &str) -> Self {
        Example {
            source: split_chars(source),
            features: features.iter().map(|f| f.to_string()).collect(),
            target: split_chars(target),
        }
    }

    pub fn source_text(&self) -> String {
        self.source.concat()
    }
}

pub fn split_chars(s: &str) -> Vec<String> {
    s.chars().map(String::from).collect()
}
