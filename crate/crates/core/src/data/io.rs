use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{split_chars, Example};

/// How a target column is split into symbols.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymbolUnit {
    #[default]
    Characters,
    /// Space-separated atomic symbols (phonemes).
    Phonemes,
}

impl SymbolUnit {
    pub fn split(self, s: &str) -> Vec<String> {
        match self {
            SymbolUnit::Characters => split_chars(s),
            SymbolUnit::Phonemes => s.split_whitespace().map(String::from).collect(),
        }
    }

    pub fn join(self, symbols: &[String]) -> String {
        match self {
            SymbolUnit::Characters => symbols.concat(),
            SymbolUnit::Phonemes => symbols.join(" "),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Inflection,
    G2p,
    Transliteration,
    Normalization,
}

impl Task {
    pub fn target_unit(self) -> SymbolUnit {
        match self {
            Task::G2p => SymbolUnit::Phonemes,
            _ => SymbolUnit::Characters,
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inflection" => Ok(Task::Inflection),
            "g2p" => Ok(Task::G2p),
            "transliteration" => Ok(Task::Transliteration),
            "normalization" => Ok(Task::Normalization),
            other => Err(Error::invalid(format!("unknown task {other:?}"))),
        }
    }
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.is_empty())
}

/// Parses `lemma<TAB>target<TAB>feat1;feat2;...` lines.
pub fn parse_inflection_tsv(text: &str, path: &Path) -> Result<Vec<Example>> {
    let err = |line, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut out = Vec::new();
    for (no, line) in lines(text) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(err(no, format!("expected 3 tab-separated columns, found {}", cols.len())));
        }
        if cols.iter().any(|c| c.is_empty()) {
            return Err(err(no, "empty field".into()));
        }
        let features: Vec<String> = cols[2].split(';').map(String::from).collect();
        if features.iter().any(|f| f.is_empty()) {
            return Err(err(no, "empty feature in bundle".into()));
        }
        out.push(Example {
            source: split_chars(cols[0]),
            features,
            target: split_chars(cols[1]),
        });
    }
    Ok(out)
}

/// Parses `source<TAB>target` lines.
pub fn parse_pair_tsv(text: &str, path: &Path, unit: SymbolUnit) -> Result<Vec<Example>> {
    let err = |line, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut out = Vec::new();
    for (no, line) in lines(text) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 {
            return Err(err(no, format!("expected 2 tab-separated columns, found {}", cols.len())));
        }
        let source = split_chars(cols[0]);
        let target = unit.split(cols[1]);
        if source.is_empty() || target.is_empty() {
            return Err(err(no, "empty field".into()));
        }
        out.push(Example {
            source,
            features: Vec::new(),
            target,
        });
    }
    Ok(out)
}

pub fn read_inflection_tsv(path: impl AsRef<Path>) -> Result<Vec<Example>> {
    let path = path.as_ref();
    parse_inflection_tsv(&std::fs::read_to_string(path)?, path)
}

pub fn read_pair_tsv(path: impl AsRef<Path>, unit: SymbolUnit) -> Result<Vec<Example>> {
    let path = path.as_ref();
    parse_pair_tsv(&std::fs::read_to_string(path)?, path, unit)
}

pub fn read_task(path: impl AsRef<Path>, task: Task) -> Result<Vec<Example>> {
    match task {
        Task::Inflection => read_inflection_tsv(path),
        other => read_pair_tsv(path, other.target_unit()),
    }
}

pub fn write_inflection_tsv(examples: &[Example]) -> String {
    let mut s = String::new();
    for ex in examples {
        let _ = writeln!(
            s,
            "{}\t{}\t{}",
            ex.source.concat(),
            ex.target.concat(),
            ex.features.join(";")
        );
    }
    s
}

pub fn write_pair_tsv(examples: &[Example], unit: SymbolUnit) -> String {
    let mut s = String::new();
    for ex in examples {
        let _ = writeln!(s, "{}\t{}", ex.source.concat(), unit.join(&ex.target));
    }
    s
}

pub fn write_task(examples: &[Example], task: Task) -> String {
    match task {
        Task::Inflection => write_inflection_tsv(examples),
        other => write_pair_tsv(examples, other.target_unit()),
    }
}
