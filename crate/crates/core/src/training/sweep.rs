use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featenc::EncodingMode;
use crate::transformer::TransformerConfig;

use super::trainer::{train, EvalRecord, TrainingData};
use super::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub batch_size: usize,
    pub mode: EncodingMode,
    /// Dev accuracy of the selected checkpoint.
    pub best_acc: f64,
    pub best_step: usize,
    pub history: Vec<EvalRecord>,
}

/// A drop in accuracy between consecutive batch sizes of one mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendViolation {
    pub mode: EncodingMode,
    pub smaller: usize,
    pub larger: usize,
    pub drop: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    pub violations: Vec<TrendViolation>,
}

impl SweepReport {
    pub fn point(&self, mode: EncodingMode, batch_size: usize) -> Option<&SweepPoint> {
        self.points
            .iter()
            .find(|p| p.mode == mode && p.batch_size == batch_size)
    }

    pub fn is_monotone(&self) -> bool {
        self.violations.is_empty()
    }

    /// Dev accuracy after every evaluation, one row per (mode, batch size,
    /// step).
    pub fn curve_tsv(&self) -> String {
        let mut out = String::from("mode\tbatch_size\tstep\tdev_acc\n");
        for p in &self.points {
            for r in &p.history {
                out.push_str(&format!("{}\t{}\t{}\t{:.6}\n", p.mode, p.batch_size, r.step, r.dev_acc));
            }
        }
        out
    }

    fn modes(&self) -> Vec<EncodingMode> {
        let mut modes = Vec::new();
        for p in &self.points {
            if !modes.contains(&p.mode) {
                modes.push(p.mode);
            }
        }
        modes
    }

    fn sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::new();
        for p in &self.points {
            if !sizes.contains(&p.batch_size) {
                sizes.push(p.batch_size);
            }
        }
        sizes
    }
}

impl fmt::Display for SweepReport {
    /// One row per batch size, one accuracy column per mode.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let modes = self.modes();
        write!(f, "{:>10}", "batch")?;
        for m in &modes {
            write!(f, "  {:>17}", m.to_string())?;
        }
        writeln!(f)?;
        for size in self.sizes() {
            write!(f, "{size:>10}")?;
            for &m in &modes {
                match self.point(m, size) {
                    Some(p) => write!(f, "  {:>17.4}", p.best_acc)?,
                    None => write!(f, "  {:>17}", "-")?,
                }
            }
            writeln!(f)?;
        }
        for v in &self.violations {
            writeln!(
                f,
                "warning: {} accuracy drops by {:.4} from batch {} to {}",
                v.mode, v.drop, v.smaller, v.larger
            )?;
        }
        Ok(())
    }
}

fn run_point(
    arch: &TransformerConfig,
    data: &TrainingData,
    base: &TrainConfig,
    batch_size: usize,
    mode: EncodingMode,
    out_dir: Option<&Path>,
) -> Result<SweepPoint> {
    let config = TrainConfig {
        batch_size,
        encoder_mode: mode,
        ..base.clone()
    };
    let dir = out_dir.map(|d| d.join(format!("{mode}_b{batch_size}")));
    let outcome = train(arch.clone(), data, config, dir.as_deref())?;
    Ok(SweepPoint {
        batch_size,
        mode,
        best_acc: outcome.best_acc.unwrap_or(0.0),
        best_step: outcome.best.step,
        history: outcome.history,
    })
}

/// Trains once per (mode, batch size) with everything else, including the
/// seed and the update budget, held fixed. Decreasing accuracy as the batch
/// grows is recorded in the report, not raised as an error.
pub fn sweep_batch_size(
    arch: &TransformerConfig,
    data: &TrainingData,
    base: &TrainConfig,
    sizes: &[usize],
    modes: &[EncodingMode],
    out_dir: Option<&Path>,
    parallel: bool,
) -> Result<SweepReport> {
    if sizes.is_empty() || modes.is_empty() {
        return Err(Error::invalid("sweep needs at least one batch size and one mode"));
    }
    let jobs: Vec<(EncodingMode, usize)> = modes
        .iter()
        .flat_map(|&m| sizes.iter().map(move |&s| (m, s)))
        .collect();
    let points: Vec<SweepPoint> = if parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .iter()
                .map(|&(m, s)| scope.spawn(move || run_point(arch, data, base, s, m, out_dir)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sweep worker panicked"))
                .collect::<Result<_>>()
        })?
    } else {
        jobs.iter()
            .map(|&(m, s)| run_point(arch, data, base, s, m, out_dir))
            .collect::<Result<_>>()?
    };
    let mut violations = Vec::new();
    for &mode in modes {
        let mut row: Vec<&SweepPoint> = points.iter().filter(|p| p.mode == mode).collect();
        row.sort_by_key(|p| p.batch_size);
        for w in row.windows(2) {
            if w[1].best_acc < w[0].best_acc {
                violations.push(TrendViolation {
                    mode,
                    smaller: w[0].batch_size,
                    larger: w[1].batch_size,
                    drop: w[0].best_acc - w[1].best_acc,
                });
            }
        }
    }
    Ok(SweepReport { points, violations })
}
