//! Ranking metrics, violation capacity and correctness-region tables.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{argmax_first, Scorer};
use crate::scalar::Scalar;

const CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub top1: f64,
    pub top5: f64,
    pub mrr_reciprocal: f64,
    pub mean_rank: f64,
    pub m: usize,
}

/// 1-based rank of `chosen` when sorting by descending score, counting
/// every other item with an equal score as ranked ahead.
pub fn rank_of_chosen<S: Scalar>(scores: &[S], chosen: usize) -> usize {
    let y = scores[chosen];
    1 + scores.iter().enumerate().filter(|&(j, &s)| j != chosen && s >= y).count()
}

pub fn report_from_ranks(ranks: &[usize]) -> EvalReport {
    let m = ranks.len();
    let mf = m as f64;
    EvalReport {
        top1: ranks.iter().filter(|&&r| r <= 1).count() as f64 / mf,
        top5: ranks.iter().filter(|&&r| r <= 5).count() as f64 / mf,
        mrr_reciprocal: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / mf,
        mean_rank: ranks.iter().map(|&r| r as f64).sum::<f64>() / mf,
        m,
    }
}

/// Scores of every example's full set, computed in parallel chunks.
fn dataset_scores<S: Scalar, M: Scorer<S> + ?Sized>(model: &M, ds: &Dataset<S>) -> Result<Vec<Vec<S>>> {
    let chunks: Vec<Result<Vec<Vec<S>>>> = ds
        .examples()
        .par_chunks(CHUNK)
        .map(|chunk| {
            let sets: Vec<&[Vec<S>]> = chunk.iter().map(|e| e.items.as_slice()).collect();
            model.batch_scores(&sets)
        })
        .collect();
    let mut out = Vec::with_capacity(ds.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

pub fn evaluate<S: Scalar, M: Scorer<S> + ?Sized>(model: &M, ds: &Dataset<S>) -> Result<EvalReport> {
    let scores = dataset_scores(model, ds)?;
    let ranks: Vec<usize> = scores.iter().zip(ds.examples()).map(|(s, e)| rank_of_chosen(s, e.chosen)).collect();
    Ok(report_from_ranks(&ranks))
}

/// Mean softmax cross-entropy and pessimistic top-1 in one pass.
pub fn loss_and_top1<S: Scalar, M: Scorer<S> + ?Sized>(model: &M, ds: &Dataset<S>) -> Result<(f64, f64)> {
    let scores = dataset_scores(model, ds)?;
    let mut loss = 0.0;
    let mut hits = 0usize;
    for (s, e) in scores.iter().zip(ds.examples()) {
        loss += crate::numerics::ops::softmax_nll(s, e.chosen)?.to_f64_lossy();
        hits += usize::from(rank_of_chosen(s, e.chosen) == 1);
    }
    Ok((loss / ds.len() as f64, hits as f64 / ds.len() as f64))
}

/// What a deletion's prediction is compared against in Eq. (6).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareTo {
    /// The observed choice `y`.
    #[default]
    Label,
    /// The model's prediction on the full set.
    FullSetPrediction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    /// Mean over included examples.
    pub kappa: f64,
    /// `None` for skipped singleton sets.
    pub per_example: Vec<Option<f64>>,
    pub included: usize,
    pub skipped: usize,
}

/// Per-example violation capacity: the fraction of deletions `s ∖ {x}`,
/// `x ≠ y`, whose predicted choice differs from the target.
pub fn violation_capacity<S: Scalar, M: Scorer<S> + ?Sized>(
    model: &M,
    ds: &Dataset<S>,
    compare_to: CompareTo,
) -> Result<ViolationReport> {
    let chunks: Vec<Result<Vec<Option<f64>>>> = ds
        .examples()
        .par_chunks(CHUNK / 4)
        .map(|chunk| {
            let mut owned: Vec<Vec<Vec<S>>> = Vec::new();
            let mut layout = Vec::with_capacity(chunk.len());
            for e in chunk {
                let n = e.items.len();
                if n < 2 {
                    layout.push(None);
                    continue;
                }
                let start = owned.len();
                owned.push(e.items.clone());
                for x in (0..n).filter(|&x| x != e.chosen) {
                    let mut sub = e.items.clone();
                    sub.remove(x);
                    owned.push(sub);
                }
                layout.push(Some(start));
            }
            if owned.is_empty() {
                return Ok(layout.into_iter().map(|_| None).collect());
            }
            let sets: Vec<&[Vec<S>]> = owned.iter().map(Vec::as_slice).collect();
            let scores = model.batch_scores(&sets)?;
            Ok(chunk
                .iter()
                .zip(layout)
                .map(|(e, start)| {
                    let start = start?;
                    let target = match compare_to {
                        CompareTo::Label => e.chosen,
                        CompareTo::FullSetPrediction => argmax_first(&scores[start]),
                    };
                    let deletions: Vec<usize> = (0..e.items.len()).filter(|&x| x != e.chosen).collect();
                    let flips = deletions
                        .iter()
                        .enumerate()
                        .filter(|&(k, &x)| {
                            let p = argmax_first(&scores[start + 1 + k]);
                            let original = if p >= x { p + 1 } else { p };
                            original != target
                        })
                        .count();
                    Some(flips as f64 / deletions.len() as f64)
                })
                .collect())
        })
        .collect();
    let mut per_example = Vec::with_capacity(ds.len());
    for c in chunks {
        per_example.extend(c?);
    }
    let included: Vec<f64> = per_example.iter().flatten().copied().collect();
    let kappa = if included.is_empty() { 0.0 } else { included.iter().sum::<f64>() / included.len() as f64 };
    Ok(ViolationReport { kappa, included: included.len(), skipped: per_example.len() - included.len(), per_example })
}

/// Whether each example's predicted choice equals its label.
pub fn correctness<S: Scalar, M: Scorer<S> + ?Sized>(model: &M, ds: &Dataset<S>) -> Result<Vec<bool>> {
    let scores = dataset_scores(model, ds)?;
    Ok(scores.iter().zip(ds.examples()).map(|(s, e)| argmax_first(s) == e.chosen).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionCell {
    /// One character per model: `1` where it predicts correctly.
    pub key: String,
    pub count: usize,
    /// Per-model mean κ over the cell's non-singleton examples.
    pub mean_kappa: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionTable {
    pub models: Vec<String>,
    pub cells: Vec<RegionCell>,
    pub m: usize,
}

impl RegionTable {
    pub fn cell(&self, key: &str) -> Option<&RegionCell> {
        self.cells.iter().find(|c| c.key == key)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("pattern,count");
        for name in &self.models {
            out.push_str(&format!(",kappa_{name}"));
        }
        out.push('\n');
        for c in &self.cells {
            out.push_str(&format!("{},{}", c.key, c.count));
            for k in &c.mean_kappa {
                match k {
                    Some(v) => out.push_str(&format!(",{v}")),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Partitions examples by which models predict them correctly.
pub fn region_partition<S: Scalar>(
    models: &[(&str, &dyn Scorer<S>)],
    ds: &Dataset<S>,
    compare_to: CompareTo,
) -> Result<RegionTable> {
    let k = models.len();
    if k < 2 {
        return Err(Error::Config("region partition needs at least two models".into()));
    }
    if k > 16 {
        return Err(Error::Config("region partition supports at most 16 models".into()));
    }
    let mut correct = Vec::with_capacity(k);
    let mut kappas = Vec::with_capacity(k);
    for (_, m) in models {
        correct.push(correctness(*m, ds)?);
        kappas.push(violation_capacity(*m, ds, compare_to)?.per_example);
    }
    let mut counts = vec![0usize; 1 << k];
    let mut sums = vec![vec![(0.0f64, 0usize); k]; 1 << k];
    for i in 0..ds.len() {
        let cell = (0..k).fold(0usize, |acc, j| acc | (usize::from(correct[j][i]) << j));
        counts[cell] += 1;
        for j in 0..k {
            if let Some(v) = kappas[j][i] {
                sums[cell][j].0 += v;
                sums[cell][j].1 += 1;
            }
        }
    }
    let cells = (0..1usize << k)
        .map(|cell| RegionCell {
            key: (0..k).map(|j| if cell >> j & 1 == 1 { '1' } else { '0' }).collect(),
            count: counts[cell],
            mean_kappa: sums[cell].iter().map(|&(s, n)| (n > 0).then(|| s / n as f64)).collect(),
        })
        .collect();
    Ok(RegionTable { models: models.iter().map(|(n, _)| n.to_string()).collect(), cells, m: ds.len() })
}

/// Mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
