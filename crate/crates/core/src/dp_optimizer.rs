//! DP-Adam: Poisson batches, per-sample clipping, Gaussian noise on the
//! summed gradient, then an ordinary Adam update.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accountant::{compose, default_orders, rdp_curve, rdp_to_dp, PrivacySpec, RdpCurve};
use crate::error::{invalid, Error, Result};
use crate::loss::CbFocalConfig;
use crate::model::{EncodedSample, HistLstm};
use crate::numerics::{gaussian_sample, l2_norm, RngStream, Vector};

/// Slack allowed when checking that inputs respect the clip bound.
pub const CLIP_TOLERANCE: f64 = 1e-9;

/// Stream keys: step `t` samples its batch from `rng.child(&[SAMPLING_STREAM, t])`
/// and draws noise from `rng.child(&[NOISE_STREAM, t])`.
pub const SAMPLING_STREAM: u64 = 1;
pub const NOISE_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct PerSampleGradients {
    pub sample_ids: Vec<usize>,
    pub grads: Vec<Vector>,
}

/// Each of `0..dataset_size` is included independently with probability `q`.
pub fn poisson_sample(dataset_size: usize, q: f64, rng: &mut RngStream) -> Vec<usize> {
    if q >= 1.0 {
        return (0..dataset_size).collect();
    }
    (0..dataset_size).filter(|_| rng.bernoulli(q)).collect()
}

/// `g / max(1, ‖g‖ / C)`.
pub fn clip_gradient(g: &[f64], clip_bound: f64) -> Result<Vector> {
    if !(clip_bound > 0.0) {
        return Err(invalid(format!("clip bound must be > 0, got {clip_bound}")));
    }
    let norm = l2_norm(g)?;
    let factor = (norm / clip_bound).max(1.0);
    Ok(g.iter().map(|&x| x / factor).collect())
}

/// `(1/N)(Σ ḡ_i + 𝒩(0, σ²C² I))`. An empty batch yields noise only.
pub fn aggregate_and_noise(
    clipped: &PerSampleGradients,
    dim: usize,
    sigma: f64,
    clip_bound: f64,
    expected_batch: f64,
    rng: &mut RngStream,
) -> Result<Vector> {
    if !(expected_batch > 0.0) {
        return Err(invalid(format!(
            "expected batch size must be > 0, got {expected_batch}"
        )));
    }
    let mut sum = vec![0.0; dim];
    for g in &clipped.grads {
        if g.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: g.len(),
            });
        }
        let norm = l2_norm(g)?;
        if norm > clip_bound * (1.0 + CLIP_TOLERANCE) {
            return Err(Error::ClipContractViolated {
                norm,
                bound: clip_bound,
            });
        }
        for (s, x) in sum.iter_mut().zip(g) {
            *s += x;
        }
    }
    if sigma > 0.0 {
        let std = sigma * clip_bound;
        if !std.is_finite() {
            return Err(invalid("noise needs a finite clip bound"));
        }
        let noise = gaussian_sample(dim, std, rng)?;
        for (s, z) in sum.iter_mut().zip(&noise) {
            *s += z;
        }
    }
    Ok(sum.into_iter().map(|s| s / expected_batch).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon_hat: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon_hat: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(invalid(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(invalid(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.epsilon_hat > 0.0) {
            return Err(invalid("adam epsilon must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vector,
    pub second_moment: Vector,
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(dim: usize, config: AdamConfig) -> Self {
        Self {
            first_moment: vec![0.0; dim],
            second_moment: vec![0.0; dim],
            t: 0,
            config,
        }
    }
}

/// One Adam update on an already privatized gradient; returns `Δw`.
pub fn dp_adam_step(state: &mut AdamState, noisy_grad: &[f64]) -> Result<Vector> {
    let dim = state.first_moment.len();
    if noisy_grad.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: noisy_grad.len(),
        });
    }
    let AdamConfig {
        learning_rate: lr,
        beta1: b1,
        beta2: b2,
        epsilon_hat: eps,
    } = state.config;
    state.t += 1;
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    let mut delta = Vec::with_capacity(dim);
    for ((m, v), &g) in state
        .first_moment
        .iter_mut()
        .zip(state.second_moment.iter_mut())
        .zip(noisy_grad)
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        delta.push(-lr * m_hat / (v_hat.sqrt() + eps));
    }
    Ok(delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
}

/// Steps per epoch for sampling rate `q`: `round(1/q)`, at least 1.
pub fn steps_per_epoch(q: f64) -> u64 {
    ((1.0 / q).round() as u64).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    pub steps: u64,
    pub epsilon: f64,
    /// Mean per-sample loss over the epoch's batches.
    pub mean_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: HistLstm,
    pub rdp: RdpCurve,
    pub epsilons: Vec<f64>,
    pub steps: u64,
}

impl TrainOutput {
    pub fn final_epsilon(&self) -> f64 {
        self.epsilons.last().copied().unwrap_or(0.0)
    }
}

/// Runs DP-Adam for `config.epochs` epochs of `round(1/q)` steps each.
/// `privacy.steps` is ignored; the step count follows from the epochs.
pub fn train(
    model: HistLstm,
    data: &[EncodedSample],
    privacy: &PrivacySpec,
    loss: &CbFocalConfig,
    config: &TrainConfig,
    rng: &RngStream,
) -> Result<TrainOutput> {
    train_with(model, data, privacy, loss, config, rng, |_, _| Ok(()))
}

/// As [`train`], calling `on_epoch` after every epoch with the current model.
pub fn train_with<F>(
    mut model: HistLstm,
    data: &[EncodedSample],
    privacy: &PrivacySpec,
    loss: &CbFocalConfig,
    config: &TrainConfig,
    rng: &RngStream,
    mut on_epoch: F,
) -> Result<TrainOutput>
where
    F: FnMut(&EpochReport, &HistLstm) -> Result<()>,
{
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    privacy.validate()?;
    loss.validate()?;
    config.adam.validate()?;
    if privacy.sigma > 0.0 && !privacy.clip_bound.is_finite() {
        return Err(invalid("a private run needs a finite clip bound"));
    }

    let orders = default_orders();
    let per_step = if privacy.is_non_private() {
        None
    } else {
        Some(rdp_curve(privacy.q, privacy.sigma, &orders)?)
    };
    let dim = model.params().len();
    let expected_batch = privacy.q * data.len() as f64;
    let per_epoch = steps_per_epoch(privacy.q);
    let mut adam = AdamState::new(dim, config.adam);
    let mut epsilons = Vec::with_capacity(config.epochs);
    let mut step: u64 = 0;

    for epoch in 1..=config.epochs {
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for _ in 0..per_epoch {
            let mut sampler = rng.child(&[SAMPLING_STREAM, step]);
            let batch = poisson_sample(data.len(), privacy.q, &mut sampler);
            let current = &model;
            let results: Vec<(f64, Vector)> = batch
                .par_iter()
                .map(|&i| {
                    let (value, g) = current.backward(&data[i], loss)?;
                    Ok((value, clip_gradient(&g, privacy.clip_bound)?))
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| match e {
                    Error::NonFinite | Error::NonFiniteIn { .. } => Error::Diverged { step },
                    other => other,
                })?;
            let mut grads = PerSampleGradients {
                sample_ids: batch,
                grads: Vec::with_capacity(results.len()),
            };
            for (value, g) in results {
                if !value.is_finite() {
                    return Err(Error::Diverged { step });
                }
                loss_sum += value;
                loss_count += 1;
                grads.grads.push(g);
            }
            let mut noise_rng = rng.child(&[NOISE_STREAM, step]);
            let noisy = aggregate_and_noise(
                &grads,
                dim,
                privacy.sigma,
                privacy.clip_bound,
                expected_batch,
                &mut noise_rng,
            )?;
            let delta = dp_adam_step(&mut adam, &noisy)?;
            for (w, d) in model.params_mut().iter_mut().zip(&delta) {
                *w += d;
            }
            if model.params().iter().any(|w| !w.is_finite()) {
                return Err(Error::Diverged { step });
            }
            step += 1;
        }
        let epsilon = match &per_step {
            None => f64::INFINITY,
            Some(curve) => rdp_to_dp(&compose(curve, step), privacy.delta)?.0,
        };
        epsilons.push(epsilon);
        let report = EpochReport {
            epoch,
            steps: step,
            epsilon,
            mean_loss: if loss_count == 0 {
                f64::NAN
            } else {
                loss_sum / loss_count as f64
            },
        };
        on_epoch(&report, &model)?;
    }

    let rdp = match &per_step {
        None => RdpCurve {
            values: vec![if step == 0 { 0.0 } else { f64::INFINITY }; orders.len()],
            orders,
        },
        Some(curve) => compose(curve, step),
    };
    Ok(TrainOutput {
        model,
        rdp,
        epsilons,
        steps: step,
    })
}
