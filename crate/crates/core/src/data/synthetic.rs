//! Rule-based inflection data for desk-scale experiments.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::Example;

const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

fn is_vowel(s: &str) -> bool {
    VOWELS.contains(&s)
}

/// A single string edit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Edit {
    Copy,
    Prefix(String),
    /// Appends `text`; with `double_final` a final consonant preceded by a
    /// single short vowel is doubled first (`stop` → `stopped`).
    Suffix { text: String, double_final: bool },
}

impl Edit {
    fn apply(&self, word: &mut Vec<String>) {
        match self {
            Edit::Copy => {}
            Edit::Prefix(p) => {
                let mut out: Vec<String> = p.chars().map(String::from).collect();
                out.append(word);
                *word = out;
            }
            Edit::Suffix { text, double_final } => {
                if *double_final && doubles_final(word) {
                    let last = word.last().unwrap().clone();
                    word.push(last);
                }
                word.extend(text.chars().map(String::from));
            }
        }
    }
}

/// consonant–vowel–consonant ending, final consonant not w/x/y.
fn doubles_final(word: &[String]) -> bool {
    let n = word.len();
    if n < 3 {
        return false;
    }
    let (c1, v, c2) = (&word[n - 3], &word[n - 2], &word[n - 1]);
    !is_vowel(c1) && is_vowel(v) && !is_vowel(c2) && !["w", "x", "y"].contains(&c2.as_str())
}

impl fmt::Display for Edit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Edit::Copy => f.write_str("copy"),
            Edit::Prefix(p) => write!(f, "prefix={p}"),
            Edit::Suffix {
                text,
                double_final: false,
            } => write!(f, "suffix={text}"),
            Edit::Suffix {
                text,
                double_final: true,
            } => write!(f, "suffix={text}+double"),
        }
    }
}

impl FromStr for Edit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "copy" {
            return Ok(Edit::Copy);
        }
        let bad = || Error::invalid(format!("cannot parse edit {s:?}"));
        let (kind, arg) = s.split_once('=').ok_or_else(bad)?;
        match kind {
            "prefix" if !arg.is_empty() => Ok(Edit::Prefix(arg.to_string())),
            "suffix" => {
                let (text, double_final) = match arg.strip_suffix("+double") {
                    Some(t) => (t, true),
                    None => (arg, false),
                };
                if text.is_empty() {
                    return Err(bad());
                }
                Ok(Edit::Suffix {
                    text: text.to_string(),
                    double_final,
                })
            }
            _ => Err(bad()),
        }
    }
}

/// Edits applied left to right.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rule(pub Vec<Edit>);

impl Rule {
    pub fn apply(&self, lemma: &[String]) -> Vec<String> {
        let mut w = lemma.to_vec();
        for e in &self.0 {
            e.apply(&mut w);
        }
        w
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let edits = s.split(',').map(str::parse).collect::<Result<Vec<Edit>>>()?;
        Ok(Rule(edits))
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(Edit::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

/// Feature bundles and the rule each one triggers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RuleTable {
    pub entries: Vec<(Vec<String>, Rule)>,
}

impl Default for RuleTable {
    /// Four English-like bundles: past participle, present participle,
    /// third singular, negation.
    fn default() -> Self {
        "V;PST;PTCP\tsuffix=ed+double\n\
         V;V.PTCP;PRS\tsuffix=ing+double\n\
         V;PRS;3;SG\tsuffix=s\n\
         V;NEG\tprefix=un\n"
            .parse()
            .expect("default rule table parses")
    }
}

impl FromStr for RuleTable {
    type Err = Error;

    /// One `bundle<TAB>rule` per line, e.g. `V;PST;PTCP\tsuffix=ed+double`.
    /// Blank lines and lines starting with `#` are skipped.
    fn from_str(s: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (no, line) in s.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (bundle, rule) = line.split_once('\t').ok_or_else(|| {
                Error::invalid(format!("rule table line {}: expected bundle<TAB>rule", no + 1))
            })?;
            let feats: Vec<String> = bundle.split(';').map(String::from).collect();
            if feats.iter().any(|f| f.is_empty()) {
                return Err(Error::invalid(format!("rule table line {}: empty feature", no + 1)));
            }
            entries.push((feats, rule.parse()?));
        }
        if entries.is_empty() {
            return Err(Error::invalid("empty rule table"));
        }
        Ok(RuleTable { entries })
    }
}

impl fmt::Display for RuleTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (bundle, rule) in &self.entries {
            writeln!(f, "{}\t{rule}", bundle.join(";"))?;
        }
        Ok(())
    }
}

/// How lemma letters are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LemmaShape {
    /// Syllables of an optional consonant onset, a vowel and an optional
    /// consonant coda, cut to the drawn length. Falls back to uniform letters
    /// when the alphabet lacks vowels or consonants.
    #[default]
    Syllabic,
    /// Independent uniform letters.
    Uniform,
}

impl FromStr for LemmaShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "syllabic" => Ok(LemmaShape::Syllabic),
            "uniform" => Ok(LemmaShape::Uniform),
            other => Err(Error::invalid(format!("unknown lemma shape {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntheticConfig {
    pub num_examples: usize,
    pub alphabet_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub shape: LemmaShape,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_examples: 2500,
            alphabet_size: 26,
            min_len: 4,
            max_len: 8,
            shape: LemmaShape::Syllabic,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntheticSplits {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

const ONSET_PROB: f64 = 0.6;
const CODA_PROB: f64 = 0.4;
/// Draws per requested example before giving up on finding new lemmata.
const MAX_DRAWS_PER_EXAMPLE: usize = 1000;

fn draw_lemma(letters: &[String], len: usize, shape: LemmaShape, rng: &mut ChaCha8Rng) -> Vec<String> {
    let (vowels, consonants): (Vec<&String>, Vec<&String>) = letters.iter().partition(|l| is_vowel(l));
    if shape == LemmaShape::Uniform || vowels.is_empty() || consonants.is_empty() {
        return (0..len)
            .map(|_| letters[rng.gen_range(0..letters.len())].clone())
            .collect();
    }
    let mut lemma = Vec::with_capacity(len + 3);
    while lemma.len() < len {
        if rng.gen_bool(ONSET_PROB) {
            lemma.push(consonants[rng.gen_range(0..consonants.len())].clone());
        }
        lemma.push(vowels[rng.gen_range(0..vowels.len())].clone());
        if rng.gen_bool(CODA_PROB) {
            lemma.push(consonants[rng.gen_range(0..consonants.len())].clone());
        }
    }
    lemma.truncate(len);
    lemma
}

/// Random lemmata over the first `alphabet_size` letters, each paired with a
/// uniformly drawn bundle. Lemmata are distinct, so the 8/1/1 split keeps
/// them disjoint across train/dev/test.
pub fn gen_synthetic_inflection(cfg: &SyntheticConfig, rules: &RuleTable) -> Result<SyntheticSplits> {
    if rules.entries.is_empty() {
        return Err(Error::invalid("empty rule table"));
    }
    if !(1..=26).contains(&cfg.alphabet_size) {
        return Err(Error::invalid("alphabet size must be in 1..=26"));
    }
    if cfg.min_len == 0 || cfg.min_len > cfg.max_len {
        return Err(Error::invalid("need 1 <= min_len <= max_len"));
    }
    let capacity: f64 = (cfg.min_len..=cfg.max_len)
        .map(|l| (cfg.alphabet_size as f64).powi(l as i32))
        .sum();
    if (cfg.num_examples as f64) > capacity / 2.0 {
        return Err(Error::invalid("too many examples for the lemma space"));
    }
    let letters: Vec<String> = (0..cfg.alphabet_size)
        .map(|i| ((b'a' + i as u8) as char).to_string())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut seen = HashSet::new();
    let mut all = Vec::with_capacity(cfg.num_examples);
    let mut draws = 0;
    while all.len() < cfg.num_examples {
        draws += 1;
        if draws > MAX_DRAWS_PER_EXAMPLE * cfg.num_examples.max(1) {
            return Err(Error::invalid("could not draw enough distinct lemmata"));
        }
        let len = rng.gen_range(cfg.min_len..=cfg.max_len);
        let lemma = draw_lemma(&letters, len, cfg.shape, &mut rng);
        if !seen.insert(lemma.clone()) {
            continue;
        }
        let (bundle, rule) = &rules.entries[rng.gen_range(0..rules.entries.len())];
        all.push(Example {
            target: rule.apply(&lemma),
            source: lemma,
            features: bundle.clone(),
        });
    }
    let n_train = cfg.num_examples * 8 / 10;
    let n_dev = cfg.num_examples / 10;
    let test = all.split_off(n_train + n_dev);
    let dev = all.split_off(n_train);
    Ok(SyntheticSplits {
        train: all,
        dev,
        test,
    })
}

/// Copies `examples` with each feature bundle reordered by a seeded shuffle.
/// Bundles with at least two distinct features are guaranteed to change.
pub fn permute_features(examples: &[Example], seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    examples
        .iter()
        .map(|ex| {
            let mut out = ex.clone();
            let distinct = ex.features.iter().collect::<HashSet<_>>().len() > 1;
            loop {
                out.features.shuffle(&mut rng);
                if !distinct || out.features != ex.features {
                    break;
                }
            }
            out
        })
        .collect()
}
