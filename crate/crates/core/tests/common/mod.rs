//! Bayes proxy for the synthetic generator: a grid filter over the latent
//! state, with emission densities estimated by Monte Carlo from the true
//! noise model.

#![allow(dead_code)]

use histdp_core::data::{
    generate_synthetic, truncate_history, Dataset, Payload, SyntheticConfig, Truncation,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

const GRID: usize = 241;
const BOUND: f64 = 3.0;
const BINS: usize = 100;
const EMISSION_DRAWS: usize = 4000;

fn state(i: usize) -> f64 {
    -BOUND + 2.0 * BOUND * i as f64 / (GRID - 1) as f64
}

/// Mass of `N(mean, sd)` clamped to `[-BOUND, BOUND]` falling in each grid cell.
fn cell_masses(mean: f64, sd: f64) -> Vec<f64> {
    let n = Normal::new(mean, sd).unwrap();
    let h = 2.0 * BOUND / (GRID - 1) as f64;
    (0..GRID)
        .map(|j| {
            let lo = if j == 0 {
                f64::NEG_INFINITY
            } else {
                state(j) - h / 2.0
            };
            let hi = if j == GRID - 1 {
                f64::INFINITY
            } else {
                state(j) + h / 2.0
            };
            n.cdf(hi) - n.cdf(lo)
        })
        .collect()
}

struct Filter {
    /// Banded rows: `(first column, masses)`.
    transition: Vec<(usize, Vec<f64>)>,
    /// `emission[i][b]`: density of the projected post in bin `b` at state `i`.
    emission: Vec<Vec<f64>>,
    init: Vec<f64>,
}

impl Filter {
    fn new(cfg: &SyntheticConfig) -> Self {
        let transition = (0..GRID)
            .map(|i| {
                let row = cell_masses(state(i), cfg.drift);
                let first = row.iter().position(|&m| m > 1e-14).unwrap();
                let last = row.iter().rposition(|&m| m > 1e-14).unwrap();
                (first, row[first..=last].to_vec())
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let emission = (0..GRID)
            .map(|i| {
                let mut counts = vec![0.5; BINS];
                for _ in 0..EMISSION_DRAWS {
                    let mut x0 = cfg.signal_strength * state(i)
                        + cfg.noise_scale * rng.sample::<f64, _>(StandardNormal);
                    let mut sq = x0 * x0;
                    for _ in 1..cfg.dim {
                        let v = cfg.noise_scale * rng.sample::<f64, _>(StandardNormal);
                        sq += v * v;
                    }
                    x0 /= sq.sqrt();
                    counts[bin(x0)] += 1.0;
                }
                let total: f64 = counts.iter().sum();
                counts.into_iter().map(|c| c / total).collect()
            })
            .collect();
        Self {
            transition,
            emission,
            init: cell_masses(0.0, 1.0),
        }
    }

    fn propagate(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; GRID];
        for (i, &pi) in p.iter().enumerate() {
            if pi == 0.0 {
                continue;
            }
            let (first, row) = &self.transition[i];
            for (o, t) in out[*first..].iter_mut().zip(row) {
                *o += pi * t;
            }
        }
        out
    }

    fn marginal_after(&self, steps: usize) -> Vec<f64> {
        (0..steps).fold(self.init.clone(), |p, _| self.propagate(&p))
    }

    /// Posterior over the final state given projections of the last
    /// `obs.len()` posts, starting from `prior` at the first of them.
    fn posterior(&self, prior: &[f64], obs: &[f64]) -> Vec<f64> {
        let mut p = prior.to_vec();
        for (k, &z) in obs.iter().enumerate() {
            if k > 0 {
                p = self.propagate(&p);
            }
            let b = bin(z);
            for (pi, e) in p.iter_mut().zip(&self.emission) {
                *pi *= e[b];
            }
            let s: f64 = p.iter().sum();
            p.iter_mut().for_each(|x| *x /= s);
        }
        p
    }
}

fn bin(z: f64) -> usize {
    (((z + 1.0) / 2.0 * BINS as f64) as usize).min(BINS - 1)
}

fn embeddings(ds: &Dataset, i: usize) -> Vec<&Vec<f64>> {
    let s = &ds.samples[i];
    s.history
        .iter()
        .chain(s.current.iter())
        .map(|p| match &p.payload {
            Payload::Embedding(e) => e,
            Payload::Text(_) => panic!("synthetic posts are embeddings"),
        })
        .collect()
}

/// Class-mean difference of the average post embedding, normalized.
fn signal_direction(ds: &Dataset, dim: usize) -> Vec<f64> {
    let counts = ds.class_counts();
    let mut d = vec![0.0; dim];
    for i in 0..ds.len() {
        let posts = embeddings(ds, i);
        let w = if ds.samples[i].label == 1 {
            1.0 / counts[1] as f64
        } else {
            -1.0 / counts[0] as f64
        };
        for e in &posts {
            for (dk, ek) in d.iter_mut().zip(e.iter()) {
                *dk += w * ek / posts.len() as f64;
            }
        }
    }
    let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
    d.into_iter().map(|x| x / n).collect()
}

fn proxy_accuracy(
    cfg: &SyntheticConfig,
    full: &Dataset,
    filter: &Filter,
    direction: &[f64],
    l: usize,
) -> f64 {
    let total_history = match cfg.history {
        histdp_core::data::HistoryLengths::Fixed { len } => len,
        _ => unreachable!(),
    };
    let ds = truncate_history(full, Truncation::Posts(l));
    let prior = filter.marginal_after(total_history - l);
    let final_marginal = filter.marginal_after(total_history);
    // Grid cells counted as positive: the top 1/(r+1) of the final marginal.
    let target = 1.0 / (cfg.imbalance_ratio + 1.0);
    let mut acc = 0.0;
    let mut positive = vec![false; GRID];
    for j in (0..GRID).rev() {
        if acc >= target {
            break;
        }
        acc += final_marginal[j];
        positive[j] = true;
    }
    let correct: usize = (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let obs: Vec<f64> = embeddings(&ds, i)
                .iter()
                .map(|e| e.iter().zip(direction).map(|(a, b)| a * b).sum())
                .collect();
            assert_eq!(obs.len(), l + 1);
            let post = filter.posterior(&prior, &obs);
            let p1: f64 = post
                .iter()
                .zip(&positive)
                .filter(|(_, &p)| p)
                .map(|(x, _)| x)
                .sum();
            usize::from(usize::from(p1 > 0.5) == ds.samples[i].label)
        })
        .sum();
    correct as f64 / ds.len() as f64
}

/// Proxy accuracy at each history length, on a fresh dataset drawn from `cfg`.
pub fn bayes_proxy_accuracies(cfg: &SyntheticConfig, lengths: &[usize]) -> Vec<f64> {
    let full = generate_synthetic(cfg).unwrap();
    let filter = Filter::new(cfg);
    let direction = signal_direction(&full, cfg.dim);
    lengths
        .iter()
        .map(|&l| proxy_accuracy(cfg, &full, &filter, &direction, l))
        .collect()
}
