//! Class-balanced focal loss.
//!
//! `loss = w_y · (1 - p_y)^γ · (-ln p_y)` with the effective-number weight
//! `w_y = (1 - β) / (1 - β^{n_y})`. At β = 0 every weight is 1 and at γ = 0
//! the focal modulation vanishes, so (β, γ) = (0, 0) is plain cross-entropy.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Lower clamp on `p_y` before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbFocalConfig {
    pub beta: f64,
    pub gamma: f64,
    /// Training-split sample count for each class.
    pub class_counts: Vec<u64>,
}

impl CbFocalConfig {
    pub fn new(beta: f64, gamma: f64, class_counts: Vec<u64>) -> Result<Self> {
        let cfg = Self {
            beta,
            gamma,
            class_counts,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Plain cross-entropy over `classes` classes.
    pub fn cross_entropy(classes: usize) -> Self {
        Self {
            beta: 0.0,
            gamma: 0.0,
            class_counts: vec![1; classes],
        }
    }

    /// Counts classes in `labels`; every class in `0..classes` gets at least 1
    /// so the weight stays defined.
    pub fn from_labels(beta: f64, gamma: f64, labels: &[usize], classes: usize) -> Result<Self> {
        let mut counts = vec![0u64; classes];
        for &y in labels {
            *counts.get_mut(y).ok_or(Error::UnknownLabel(y))? += 1;
        }
        counts.iter_mut().for_each(|c| *c = (*c).max(1));
        Self::new(beta, gamma, counts)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta) {
            return Err(invalid(format!(
                "beta must be in [0, 1), got {}",
                self.beta
            )));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(invalid(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if self.class_counts.len() < 2 || self.class_counts.contains(&0) {
            return Err(invalid(
                "class counts must cover >= 2 classes, all positive",
            ));
        }
        Ok(())
    }

    /// Effective-number weight of class `y`.
    pub fn weight(&self, y: usize) -> Result<f64> {
        let n = *self.class_counts.get(y).ok_or(Error::UnknownLabel(y))?;
        if self.beta == 0.0 {
            return Ok(1.0);
        }
        // 1 - β^n = -expm1(n ln β), accurate for β near 1.
        let one_minus_beta_n = -(n as f64 * self.beta.ln()).exp_m1();
        Ok((1.0 - self.beta) / one_minus_beta_n)
    }
}

fn target_prob(probs: &[f64], label: usize, config: &CbFocalConfig) -> Result<f64> {
    if label >= probs.len() || label >= config.class_counts.len() {
        return Err(Error::UnknownLabel(label));
    }
    Ok(probs[label].max(PROB_FLOOR))
}

pub fn cb_focal_loss(probs: &[f64], label: usize, config: &CbFocalConfig) -> Result<f64> {
    let p = target_prob(probs, label, config)?;
    let w = config.weight(label)?;
    let modulation = if config.gamma == 0.0 {
        1.0
    } else {
        (1.0 - p).max(0.0).powf(config.gamma)
    };
    Ok(w * modulation * -p.ln())
}

/// Gradient of [`cb_focal_loss`] with respect to the softmax inputs (logits).
pub fn cb_focal_grad(probs: &[f64], label: usize, config: &CbFocalConfig) -> Result<Vec<f64>> {
    let p = target_prob(probs, label, config)?;
    let w = config.weight(label)?;
    let g = config.gamma;
    let one_minus = (1.0 - p).max(0.0);
    // dL/dp_y · p_y, so that dL/dz_j = factor · (δ_jy - p_j).
    let factor = if one_minus == 0.0 {
        0.0
    } else if g == 0.0 {
        -w
    } else {
        w * (g * one_minus.powf(g - 1.0) * p * p.ln() - one_minus.powf(g))
    };
    Ok(probs
        .iter()
        .enumerate()
        .map(|(j, &pj)| {
            let indicator = if j == label { 1.0 } else { 0.0 };
            factor * (indicator - pj)
        })
        .collect())
}
