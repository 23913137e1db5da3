//! Rényi-DP accounting for the Poisson-subsampled Gaussian mechanism.
//!
//! Per-step RDP at integer order α is
//!
//! ```text
//! RDP(α) = log( Σ_{k=0}^{α} C(α,k) (1-q)^{α-k} q^k exp((k²-k) / (2σ²)) ) / (α-1)
//! ```
//!
//! evaluated term-wise in log space. Steps compose additively, and the
//! conversion to (ε, δ) uses `ε = min_α RDP(α) + log(1/δ) / (α-1)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::log_sum_exp;

/// Integer orders used for accounting: 2..=64 plus 128 and 256.
pub fn default_orders() -> Vec<f64> {
    (2..=64u32).chain([128, 256]).map(f64::from).collect()
}

/// Parameters of a DP-SGD run as seen by the accountant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpec {
    /// Poisson sampling rate (expected batch fraction).
    pub q: f64,
    /// Noise multiplier; noise std is `sigma * clip_bound`.
    pub sigma: f64,
    /// L2 bound on per-sample gradients. `+inf` together with `sigma == 0`
    /// is the non-private sentinel.
    pub clip_bound: f64,
    pub delta: f64,
    pub steps: u64,
}

impl PrivacySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(invalid(format!(
                "sampling rate q must be in (0, 1], got {}",
                self.q
            )));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(invalid(format!(
                "sigma must be finite and >= 0, got {}",
                self.sigma
            )));
        }
        if !(self.clip_bound > 0.0) {
            return Err(invalid(format!(
                "clip bound must be > 0, got {}",
                self.clip_bound
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid(format!(
                "delta must be in (0, 1), got {}",
                self.delta
            )));
        }
        Ok(())
    }

    pub fn is_non_private(&self) -> bool {
        self.sigma == 0.0
    }

    /// True when δ is not below the inverse dataset size.
    pub fn delta_too_large(&self, dataset_size: usize) -> bool {
        dataset_size > 0 && self.delta >= 1.0 / dataset_size as f64
    }

    /// ε after `steps` steps, `+inf` for the non-private sentinel.
    pub fn epsilon(&self) -> Result<f64> {
        self.epsilon_after(self.steps)
    }

    pub fn epsilon_after(&self, steps: u64) -> Result<f64> {
        if self.is_non_private() {
            return Ok(f64::INFINITY);
        }
        let curve = compose(&rdp_curve(self.q, self.sigma, &default_orders())?, steps);
        Ok(rdp_to_dp(&curve, self.delta)?.0)
    }
}

/// Cumulative RDP at a set of orders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpCurve {
    pub orders: Vec<f64>,
    pub values: Vec<f64>,
}

impl RdpCurve {
    pub fn zeros(orders: Vec<f64>) -> Self {
        let values = vec![0.0; orders.len()];
        Self { orders, values }
    }

    /// Elementwise sum of two curves over the same orders.
    pub fn add(&self, other: &RdpCurve) -> Result<RdpCurve> {
        if self.orders != other.orders {
            return Err(invalid("cannot add RDP curves over different orders"));
        }
        Ok(RdpCurve {
            orders: self.orders.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }
}

/// `ln k!` for `k = 0..=n`.
fn ln_factorials(n: usize) -> Vec<f64> {
    let mut table = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    table.push(acc);
    for i in 1..=n {
        acc += (i as f64).ln();
        table.push(acc);
    }
    table
}

/// RDP of one application of the Poisson-subsampled Gaussian mechanism at
/// integer order `alpha`. `sigma == 0` gives `+inf`.
pub fn rdp_step(q: f64, sigma: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 1.0) {
        return Err(invalid(format!("RDP order must be > 1, got {alpha}")));
    }
    if alpha.fract() != 0.0 || alpha > 1e6 {
        return Err(invalid(format!(
            "only integer RDP orders are supported, got {alpha}"
        )));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(invalid(format!(
            "sampling rate q must be in (0, 1], got {q}"
        )));
    }
    if !(sigma >= 0.0) {
        return Err(invalid(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(f64::INFINITY);
    }
    if q == 1.0 {
        return Ok(alpha / (2.0 * sigma * sigma));
    }
    let a = alpha as usize;
    let lf = ln_factorials(a);
    let log_q = q.ln();
    let log_1mq = (-q).ln_1p();
    let two_var = 2.0 * sigma * sigma;
    let terms: Vec<f64> = (0..=a)
        .map(|k| {
            let kf = k as f64;
            (lf[a] - lf[k] - lf[a - k])
                + (a - k) as f64 * log_1mq
                + kf * log_q
                + (kf * kf - kf) / two_var
        })
        .collect();
    let log_moment = log_sum_exp(&terms);
    // The moment is >= 1 analytically; clamp rounding below zero.
    Ok((log_moment / (alpha - 1.0)).max(0.0))
}

/// Per-step RDP curve over `orders`.
pub fn rdp_curve(q: f64, sigma: f64, orders: &[f64]) -> Result<RdpCurve> {
    let values = orders
        .iter()
        .map(|&a| rdp_step(q, sigma, a))
        .collect::<Result<Vec<_>>>()?;
    Ok(RdpCurve {
        orders: orders.to_vec(),
        values,
    })
}

/// `steps` identical applications: RDP composes additively.
pub fn compose(per_step: &RdpCurve, steps: u64) -> RdpCurve {
    let t = steps as f64;
    RdpCurve {
        orders: per_step.orders.clone(),
        values: per_step
            .values
            .iter()
            .map(|&v| if steps == 0 { 0.0 } else { v * t })
            .collect(),
    }
}

/// Converts an RDP curve to (ε, best order) at the given δ.
pub fn rdp_to_dp(curve: &RdpCurve, delta: f64) -> Result<(f64, f64)> {
    if curve.orders.is_empty() || curve.orders.len() != curve.values.len() {
        return Err(invalid("RDP curve must be nonempty with matching lengths"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must be in (0, 1), got {delta}")));
    }
    let log_inv_delta = -delta.ln();
    let mut best: Option<(f64, f64)> = None;
    for (&alpha, &rdp) in curve.orders.iter().zip(&curve.values) {
        if !rdp.is_finite() {
            continue;
        }
        let eps = rdp + log_inv_delta / (alpha - 1.0);
        if best.is_none_or(|(b, _)| eps < b) {
            best = Some((eps, alpha));
        }
    }
    let (eps, order) = best.ok_or(Error::BudgetUnbounded)?;
    Ok((eps.max(0.0), order))
}

/// ε consumed after `steps` steps at `(q, sigma)`.
pub fn epsilon_for(q: f64, sigma: f64, steps: u64, delta: f64) -> Result<(f64, f64)> {
    let curve = compose(&rdp_curve(q, sigma, &default_orders())?, steps);
    rdp_to_dp(&curve, delta)
}

pub const SIGMA_SEARCH_MIN: f64 = 1e-2;
pub const SIGMA_SEARCH_MAX: f64 = 1e3;

/// Smallest noise multiplier (to relative width 1e-3) whose accounted ε is at
/// most `target_epsilon`.
pub fn calibrate_sigma(target_epsilon: f64, delta: f64, q: f64, steps: u64) -> Result<f64> {
    if !(target_epsilon > 0.0) || !target_epsilon.is_finite() {
        return Err(invalid(format!(
            "target epsilon must be finite and > 0, got {target_epsilon}"
        )));
    }
    let eps = |s: f64| epsilon_for(q, s, steps, delta).map(|(e, _)| e);
    let (mut lo, mut hi) = (SIGMA_SEARCH_MIN, SIGMA_SEARCH_MAX);
    let eps_lo = eps(lo)?;
    let eps_hi = eps(hi)?;
    if eps_hi > target_epsilon {
        return Err(Error::Unreachable {
            target: target_epsilon,
            sigma_lo: lo,
            sigma_hi: hi,
            eps_at_lo: eps_lo,
            eps_at_hi: eps_hi,
        });
    }
    if eps_lo <= target_epsilon {
        return Ok(lo);
    }
    while (hi - lo) / hi > 1e-3 {
        let mid = 0.5 * (lo + hi);
        if eps(mid)? <= target_epsilon {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
