use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{invalid, Error, Result};
use crate::numerics::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    /// Oldest 70% of labeled units train, next 10% validate, newest 20% test.
    Temporal,
    /// 70:10:20 within every class, seeded.
    Stratified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub kind: SplitKind,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// `(train, val, test)` counts for `n` units at 70:10:20.
pub fn split_fractions(n: usize) -> (usize, usize, usize) {
    let test = (0.2 * n as f64).round() as usize;
    let val = (0.1 * n as f64).round() as usize;
    (n - test - val, val, test)
}

pub fn split(dataset: &Dataset, kind: SplitKind, seed: u64) -> Result<DatasetSplit> {
    let n = dataset.len();
    if n < 10 {
        return Err(invalid(format!(
            "need at least 10 labeled units to split, got {n}"
        )));
    }
    match kind {
        SplitKind::Temporal => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by_key(|&i| (dataset.samples[i].ts, i));
            let (n_train, n_val, _) = split_fractions(n);
            Ok(DatasetSplit {
                kind,
                train: order[..n_train].to_vec(),
                val: order[n_train..n_train + n_val].to_vec(),
                test: order[n_train + n_val..].to_vec(),
            })
        }
        SplitKind::Stratified => {
            let mut rng = RngStream::keyed(seed, &[0x0073_706c_6974]);
            let mut out = DatasetSplit {
                kind,
                train: Vec::new(),
                val: Vec::new(),
                test: Vec::new(),
            };
            for class in 0..dataset.num_classes {
                let mut members: Vec<usize> = (0..n)
                    .filter(|&i| dataset.samples[i].label == class)
                    .collect();
                if members.is_empty() {
                    continue;
                }
                if members.len() < 3 {
                    return Err(Error::Infeasible(format!(
                        "class {class} has {} units; stratified split needs at least 3",
                        members.len()
                    )));
                }
                rng.shuffle(&mut members);
                let (n_train, n_val, _) = split_fractions(members.len());
                out.train.extend_from_slice(&members[..n_train]);
                out.val
                    .extend_from_slice(&members[n_train..n_train + n_val]);
                out.test.extend_from_slice(&members[n_train + n_val..]);
            }
            out.train.sort_unstable();
            out.val.sort_unstable();
            out.test.sort_unstable();
            Ok(out)
        }
    }
}

/// How much history each sample keeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Truncation {
    /// Most recent `n` historical posts.
    Posts(usize),
    /// Historical posts no older than this many days before the prediction time.
    Days(f64),
}

pub fn truncate_history(dataset: &Dataset, truncation: Truncation) -> Dataset {
    let mut out = dataset.clone();
    for s in &mut out.samples {
        match truncation {
            Truncation::Posts(n) => {
                let drop = s.history.len().saturating_sub(n);
                s.history.drain(..drop);
            }
            Truncation::Days(days) => {
                let cutoff = s.ts as f64 - days * 86_400.0;
                s.history.retain(|p| p.ts as f64 >= cutoff);
            }
        }
    }
    out
}

/// Randomly drops units of one class of a binary dataset so that
/// `count(class 0) / count(class 1)` hits `target_ratio`.
pub fn subsample_imbalance(dataset: &Dataset, target_ratio: f64, seed: u64) -> Result<Dataset> {
    if dataset.num_classes != 2 {
        return Err(invalid("imbalance subsampling needs a binary dataset"));
    }
    if !(target_ratio > 0.0) || !target_ratio.is_finite() {
        return Err(invalid(format!(
            "target ratio must be finite and > 0, got {target_ratio}"
        )));
    }
    let neg: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset.samples[i].label == 0)
        .collect();
    let pos: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset.samples[i].label == 1)
        .collect();
    if neg.is_empty() || pos.is_empty() {
        return Err(Error::Infeasible("both classes must be present".into()));
    }
    let current = neg.len() as f64 / pos.len() as f64;
    let (keep_neg, keep_pos) = if target_ratio >= current {
        (
            neg.len(),
            (neg.len() as f64 / target_ratio).round() as usize,
        )
    } else {
        (
            (pos.len() as f64 * target_ratio).round() as usize,
            pos.len(),
        )
    };
    if keep_neg == 0 || keep_pos == 0 {
        return Err(Error::Infeasible(format!(
            "ratio {target_ratio}:1 leaves an empty class ({} vs {})",
            neg.len(),
            pos.len()
        )));
    }
    let mut rng = RngStream::keyed(seed, &[0x0069_6d62_616c]);
    let mut pick = |mut idx: Vec<usize>, k: usize| {
        if k < idx.len() {
            rng.shuffle(&mut idx);
            idx.truncate(k);
        }
        idx
    };
    let mut kept = pick(neg, keep_neg);
    kept.extend(pick(pos, keep_pos));
    kept.sort_unstable();
    Ok(dataset.select(&kept))
}
