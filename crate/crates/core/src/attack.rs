//! Black-box membership inference by loss thresholding.
//!
//! A sample is guessed to be a member when its loss is at most the threshold.
//! The threshold is fit on a calibration slice of both score sets and the
//! rates are measured on the rest.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::loss::CbFocalConfig;
use crate::metrics::{privacy_leakage, AttackRates};
use crate::model::{EncodedSample, HistLstm};
use crate::numerics::RngStream;

/// Two-sided 99% normal quantile.
const Z_99: f64 = 2.575_829_303_548_900_4;

/// Indices of members (from training) and non-members (held out), equal in size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackSplit {
    pub members: Vec<usize>,
    pub non_members: Vec<usize>,
}

impl AttackSplit {
    pub fn new(members: Vec<usize>, non_members: Vec<usize>) -> Result<Self> {
        if members.is_empty() || members.len() != non_members.len() {
            return Err(invalid(format!(
                "attack split needs equal nonempty sides, got {} and {}",
                members.len(),
                non_members.len()
            )));
        }
        let set: std::collections::HashSet<_> = members.iter().collect();
        if non_members.iter().any(|i| set.contains(i)) {
            return Err(invalid("members and non-members overlap"));
        }
        Ok(Self {
            members,
            non_members,
        })
    }

    /// Draws the larger side down at random so both have equal size.
    pub fn balanced(train: &[usize], held_out: &[usize], rng: &mut RngStream) -> Result<Self> {
        let k = train.len().min(held_out.len());
        let mut pick = |idx: &[usize]| {
            let mut v = idx.to_vec();
            rng.shuffle(&mut v);
            v.truncate(k);
            v.sort_unstable();
            v
        };
        let members = pick(train);
        let non_members = pick(held_out);
        Self::new(members, non_members)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub threshold: f64,
    pub rates: AttackRates,
    pub pl: f64,
    /// Evaluation-slice sizes the rates were measured on.
    pub eval_members: usize,
    pub eval_non_members: usize,
    pub member_scores: Vec<f64>,
    pub non_member_scores: Vec<f64>,
}

/// Per-sample loss; lower means more member-like. Uses forward passes only.
pub fn score_samples(
    model: &HistLstm,
    samples: &[EncodedSample],
    loss: &CbFocalConfig,
) -> Result<Vec<f64>> {
    samples
        .par_iter()
        .map(|s| model.sample_loss(s, loss))
        .collect()
}

fn rates_at(threshold: f64, members: &[f64], non_members: &[f64]) -> (f64, f64) {
    let tp = members.iter().filter(|&&s| s <= threshold).count();
    let fp = non_members.iter().filter(|&&s| s <= threshold).count();
    (
        tp as f64 / members.len() as f64,
        fp as f64 / non_members.len() as f64,
    )
}

/// Threshold maximizing `TPR − FPR` on the calibration slice.
fn fit_threshold(members: &[f64], non_members: &[f64]) -> f64 {
    let mut candidates: Vec<f64> = members.iter().chain(non_members).copied().collect();
    candidates.push(f64::NEG_INFINITY);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &t in &candidates {
        let (tpr, fpr) = rates_at(t, members, non_members);
        if tpr - fpr > best.0 {
            best = (tpr - fpr, t);
        }
    }
    best.1
}

pub fn threshold_attack(
    member_scores: &[f64],
    non_member_scores: &[f64],
    calibration_fraction: f64,
    rng: &mut RngStream,
) -> Result<AttackResult> {
    if !(calibration_fraction > 0.0 && calibration_fraction < 1.0) {
        return Err(invalid(format!(
            "calibration fraction must be in (0, 1), got {calibration_fraction}"
        )));
    }
    if member_scores.is_empty() || non_member_scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if member_scores
        .iter()
        .chain(non_member_scores)
        .any(|s| s.is_nan())
    {
        return Err(Error::NonFinite);
    }
    let mut split = |scores: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut v = scores.to_vec();
        rng.shuffle(&mut v);
        let k = ((calibration_fraction * v.len() as f64).round() as usize).clamp(1, v.len());
        if k == v.len() {
            return Err(invalid("too few scores to hold out an evaluation slice"));
        }
        let eval = v.split_off(k);
        Ok((v, eval))
    };
    let (cal_m, eval_m) = split(member_scores)?;
    let (cal_n, eval_n) = split(non_member_scores)?;
    let threshold = fit_threshold(&cal_m, &cal_n);
    let (tpr, fpr) = rates_at(threshold, &eval_m, &eval_n);
    let rates = AttackRates::new(tpr, fpr)?;
    Ok(AttackResult {
        threshold,
        rates,
        pl: privacy_leakage(rates),
        eval_members: eval_m.len(),
        eval_non_members: eval_n.len(),
        member_scores: member_scores.to_vec(),
        non_member_scores: non_member_scores.to_vec(),
    })
}

/// Wilson score interval for `successes / n` at the 99% level.
pub fn wilson_interval(rate: f64, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let z2 = Z_99 * Z_99;
    let denom = 1.0 + z2 / n;
    let center = (rate + z2 / (2.0 * n)) / denom;
    let half = Z_99 * (rate * (1.0 - rate) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub pass: bool,
    /// `e^ε · FPR_hi + δ − TPR_lo`; negative on failure.
    pub margin: f64,
    pub tpr_low: f64,
    pub fpr_high: f64,
}

/// Checks `TPR ≤ e^ε · FPR + δ` allowing 99% sampling error on both rates.
pub fn dp_bound_check(result: &AttackResult, epsilon: f64, delta: f64) -> BoundCheck {
    let (tpr_low, _) = wilson_interval(result.rates.tpr, result.eval_members);
    let (_, fpr_high) = wilson_interval(result.rates.fpr, result.eval_non_members);
    if epsilon.is_infinite() {
        return BoundCheck {
            pass: true,
            margin: f64::INFINITY,
            tpr_low,
            fpr_high,
        };
    }
    let margin = epsilon.exp() * fpr_high + delta - tpr_low;
    BoundCheck {
        pass: margin >= 0.0,
        margin,
        tpr_low,
        fpr_high,
    }
}
