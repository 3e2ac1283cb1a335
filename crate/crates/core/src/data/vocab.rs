use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Example;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Namespace of a vocabulary entry. A feature `V` and a character `V` are
/// distinct symbols.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymbolKind {
    Reserved,
    Character,
    Feature,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Symbol {
    pub kind: SymbolKind,
    pub text: String,
}

/// Bidirectional symbol/index map with `PAD`, `BOS`, `EOS`, `UNK` at 0..4.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<Symbol>", into = "Vec<Symbol>")]
pub struct Vocabulary {
    symbols: Vec<Symbol>,
    index: HashMap<Symbol, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl From<Vec<Symbol>> for Vocabulary {
    fn from(symbols: Vec<Symbol>) -> Self {
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Vocabulary { symbols, index }
    }
}

impl From<Vocabulary> for Vec<Symbol> {
    fn from(v: Vocabulary) -> Self {
        v.symbols
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        RESERVED
            .iter()
            .map(|s| Symbol {
                kind: SymbolKind::Reserved,
                text: s.to_string(),
            })
            .collect::<Vec<_>>()
            .into()
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Index of the symbol, inserting it if new.
    pub fn add(&mut self, kind: SymbolKind, text: &str) -> usize {
        let key = Symbol {
            kind,
            text: text.to_string(),
        };
        if let Some(&i) = self.index.get(&key) {
            return i;
        }
        let i = self.symbols.len();
        self.symbols.push(key.clone());
        self.index.insert(key, i);
        i
    }

    pub fn lookup(&self, kind: SymbolKind, text: &str) -> Option<usize> {
        self.index
            .get(&Symbol {
                kind,
                text: text.to_string(),
            })
            .copied()
    }

    pub fn char_index(&self, text: &str) -> Option<usize> {
        self.lookup(SymbolKind::Character, text)
    }

    pub fn feature_index(&self, text: &str) -> Option<usize> {
        self.lookup(SymbolKind::Feature, text)
    }

    pub fn symbol(&self, index: usize) -> Option<&Symbol> {
        self.symbols.get(index)
    }

    pub fn text(&self, index: usize) -> &str {
        self.symbols
            .get(index)
            .map(|s| s.text.as_str())
            .unwrap_or(RESERVED[UNK])
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.symbols
    }

    /// Character indices for `symbols`, unknown ones mapped to `UNK`.
    pub fn encode_chars(&self, symbols: &[String]) -> Vec<usize> {
        symbols
            .iter()
            .map(|s| self.char_index(s).unwrap_or(UNK))
            .collect()
    }

    pub fn decode(&self, indices: &[usize]) -> Vec<String> {
        indices.iter().map(|&i| self.text(i).to_string()).collect()
    }
}

/// Source and target vocabularies in first-occurrence order. Source entries
/// are scanned features first, then characters, per example.
pub fn build_vocab(examples: &[Example]) -> (Vocabulary, Vocabulary) {
    let mut src = Vocabulary::new();
    let mut tgt = Vocabulary::new();
    for ex in examples {
        for f in &ex.features {
            src.add(SymbolKind::Feature, f);
        }
        for c in &ex.source {
            src.add(SymbolKind::Character, c);
        }
        for c in &ex.target {
            tgt.add(SymbolKind::Character, c);
        }
    }
    (src, tgt)
}
