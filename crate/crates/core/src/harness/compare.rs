use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::run::RunResult;
use crate::error::{invalid, Result};
use crate::stats::{median, wilcoxon_signed_rank};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub n_pairs: usize,
    pub p_value: f64,
    /// Median of `a − b` over paired seeds.
    pub median_difference: f64,
    /// Sign of the median difference: 1, -1 or 0.
    pub direction: i8,
}

/// Two-sided Wilcoxon signed-rank comparison of `metric`, pairing rows by seed.
pub fn compare(a: &[RunResult], b: &[RunResult], metric: &str) -> Result<Comparison> {
    let index = |rows: &[RunResult]| -> Result<BTreeMap<u64, f64>> {
        let mut m = BTreeMap::new();
        for r in rows.iter().filter(|r| r.is_ok()) {
            if m.insert(r.seed, r.metric(metric)?).is_some() {
                return Err(invalid(format!(
                    "duplicate seed {} in comparison input",
                    r.seed
                )));
            }
        }
        Ok(m)
    };
    let (ia, ib) = (index(a)?, index(b)?);
    if ia.is_empty() || ia.keys().ne(ib.keys()) {
        return Err(invalid("comparison inputs are not paired by seed"));
    }
    let xs: Vec<f64> = ia.values().copied().collect();
    let ys: Vec<f64> = ib.values().copied().collect();
    let test = wilcoxon_signed_rank(&xs, &ys)?;
    let diffs: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| x - y).collect();
    let med = median(&diffs)?;
    Ok(Comparison {
        metric: metric.to_string(),
        n_pairs: xs.len(),
        p_value: test.p_value,
        median_difference: med,
        direction: if med > 0.0 {
            1
        } else if med < 0.0 {
            -1
        } else {
            0
        },
    })
}
