use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SymbolUnit;
use crate::error::{Error, Result};

use super::edit_distance;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prediction {
    pub source: String,
    pub predicted: Vec<String>,
    pub gold: Vec<String>,
}

impl Prediction {
    pub fn correct(&self) -> bool {
        self.predicted == self.gold
    }

    pub fn distance(&self) -> usize {
        edit_distance(&self.predicted, &self.gold)
    }
}

/// Aggregate scores over a prediction set.
///
/// `acc` and `wer` are item-level, `per` is corpus-level (summed distances over
/// summed gold lengths), `cer_i` averages the length-normalized distance over
/// incorrect items only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub items: usize,
    pub acc: f64,
    pub mean_dist: f64,
    pub wer: f64,
    pub per: f64,
    pub cer_i: f64,
    /// Incorrect items per exact gold length.
    pub by_length: BTreeMap<usize, usize>,
}

pub fn evaluate(predictions: &[Prediction]) -> Result<MetricsReport> {
    if predictions.is_empty() {
        return Err(Error::invalid("no predictions to evaluate"));
    }
    let n = predictions.len() as f64;
    let mut correct = 0usize;
    let mut dist_sum = 0usize;
    let mut gold_sum = 0usize;
    let mut cer_sum = 0.0;
    let mut wrong = 0usize;
    let mut by_length = BTreeMap::new();
    for p in predictions {
        let d = p.distance();
        dist_sum += d;
        gold_sum += p.gold.len();
        if p.correct() {
            correct += 1;
        } else {
            wrong += 1;
            cer_sum += d as f64 / p.gold.len().max(1) as f64;
            *by_length.entry(p.gold.len()).or_insert(0) += 1;
        }
    }
    Ok(MetricsReport {
        items: predictions.len(),
        acc: correct as f64 / n,
        mean_dist: dist_sum as f64 / n,
        wer: wrong as f64 / n,
        per: dist_sum as f64 / gold_sum.max(1) as f64,
        cer_i: if wrong == 0 { 0.0 } else { cer_sum / wrong as f64 },
        by_length,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthBin {
    /// Inclusive gold-length range.
    pub lo: usize,
    pub hi: usize,
    pub errors: usize,
}

/// Incorrect predictions grouped into gold-length bins `[1..w]`, `[w+1..2w]`, …
/// Only non-empty bins are returned.
pub fn error_length_histogram(predictions: &[Prediction], bin_width: usize) -> Result<Vec<LengthBin>> {
    if bin_width == 0 {
        return Err(Error::invalid("bin width must be at least 1"));
    }
    let mut bins: BTreeMap<usize, usize> = BTreeMap::new();
    for p in predictions.iter().filter(|p| !p.correct()) {
        let bin = p.gold.len().saturating_sub(1) / bin_width;
        *bins.entry(bin).or_insert(0) += 1;
    }
    Ok(bins
        .into_iter()
        .map(|(b, errors)| LengthBin {
            lo: b * bin_width + 1,
            hi: (b + 1) * bin_width,
            errors,
        })
        .collect())
}

impl MetricsReport {
    /// `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "items={}", self.items);
        let _ = writeln!(s, "acc={}", self.acc);
        let _ = writeln!(s, "dist={}", self.mean_dist);
        let _ = writeln!(s, "wer={}", self.wer);
        let _ = writeln!(s, "per={}", self.per);
        let _ = writeln!(s, "cer_i={}", self.cer_i);
        for (len, count) in &self.by_length {
            let _ = writeln!(s, "errors_len_{len}={count}");
        }
        s
    }

    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("bad metrics line {line:?}")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let num = |k: &str| -> Result<f64> {
            map.get(k)
                .ok_or_else(|| Error::invalid(format!("missing metric {k}")))?
                .parse()
                .map_err(|_| Error::invalid(format!("metric {k} is not a number")))
        };
        let by_length = map
            .iter()
            .filter_map(|(k, v)| {
                let len = k.strip_prefix("errors_len_")?.parse().ok()?;
                Some((len, v.parse().ok()?))
            })
            .collect();
        Ok(MetricsReport {
            items: num("items")? as usize,
            acc: num("acc")?,
            mean_dist: num("dist")?,
            wer: num("wer")?,
            per: num("per")?,
            cer_i: num("cer_i")?,
            by_length,
        })
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8}{:>10}", "items", self.items)?;
        writeln!(f, "{:<8}{:>10.4}", "ACC", self.acc * 100.0)?;
        writeln!(f, "{:<8}{:>10.4}", "Dist", self.mean_dist)?;
        writeln!(f, "{:<8}{:>10.4}", "WER", self.wer * 100.0)?;
        writeln!(f, "{:<8}{:>10.4}", "PER", self.per * 100.0)?;
        writeln!(f, "{:<8}{:>10.4}", "CER_i", self.cer_i * 100.0)?;
        if !self.by_length.is_empty() {
            writeln!(f, "errors by gold length:")?;
            for (len, count) in &self.by_length {
                writeln!(f, "  {len:>4}  {count:>6}")?;
            }
        }
        Ok(())
    }
}

/// `source<TAB>gold<TAB>predicted` lines.
pub fn write_predictions(predictions: &[Prediction], unit: SymbolUnit) -> String {
    let mut s = String::new();
    for p in predictions {
        let _ = writeln!(
            s,
            "{}\t{}\t{}",
            p.source,
            unit.join(&p.gold),
            unit.join(&p.predicted)
        );
    }
    s
}

pub fn parse_predictions(text: &str, path: &Path, unit: SymbolUnit) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected 3 tab-separated columns, found {}", cols.len()),
            });
        }
        out.push(Prediction {
            source: cols[0].to_string(),
            gold: unit.split(cols[1]),
            predicted: unit.split(cols[2]),
        });
    }
    Ok(out)
}

pub fn read_predictions(path: impl AsRef<Path>, unit: SymbolUnit) -> Result<Vec<Prediction>> {
    let path = path.as_ref();
    parse_predictions(&std::fs::read_to_string(path)?, path, unit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::split_chars;

    fn pred(p: &str, g: &str) -> Prediction {
        Prediction {
            source: String::new(),
            predicted: split_chars(p),
            gold: split_chars(g),
        }
    }

    #[test]
    fn all_correct() {
        let r = evaluate(&[pred("ab", "ab"), pred("c", "c")]).unwrap();
        assert_eq!((r.acc, r.mean_dist, r.wer, r.cer_i, r.per), (1.0, 0.0, 0.0, 0.0, 0.0));
        assert!(r.by_length.is_empty());
    }

    #[test]
    fn empty_set_is_an_error() {
        assert!(evaluate(&[]).is_err());
    }

    #[test]
    fn empty_gold_counts_full_prediction_length() {
        let r = evaluate(&[pred("abc", "")]).unwrap();
        assert_eq!(r.mean_dist, 3.0);
        assert_eq!(r.cer_i, 3.0);
    }

    #[test]
    fn histogram_bins() {
        let preds = [pred("x", "abc"), pred("y", "abcdefghijkl"), pred("ok", "ok")];
        let h = error_length_histogram(&preds, 5).unwrap();
        assert_eq!(
            h,
            vec![
                LengthBin { lo: 1, hi: 5, errors: 1 },
                LengthBin { lo: 11, hi: 15, errors: 1 }
            ]
        );
        assert!(error_length_histogram(&preds[2..], 5).unwrap().is_empty());
        assert!(error_length_histogram(&preds, 0).is_err());
    }

    #[test]
    fn key_value_round_trip() {
        let r = evaluate(&[pred("smeard", "smeared"), pred("go", "go")]).unwrap();
        let back = MetricsReport::from_key_values(&r.to_key_values()).unwrap();
        assert_eq!(back, r);
        assert!(r.to_string().contains("CER_i"));
    }

    #[test]
    fn predictions_file_round_trip() {
        let preds = vec![Prediction {
            source: "cat".into(),
            gold: vec!["K".into(), "AE".into(), "T".into()],
            predicted: vec!["K".into(), "AH".into(), "T".into()],
        }];
        let text = write_predictions(&preds, SymbolUnit::Phonemes);
        assert_eq!(text, "cat\tK AE T\tK AH T\n");
        let back = parse_predictions(&text, Path::new("p.tsv"), SymbolUnit::Phonemes).unwrap();
        assert_eq!(back, preds);
    }
}
