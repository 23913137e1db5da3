//! Synthetic user timelines with a known, tunable history signal.
//!
//! Each user carries a latent risk state that follows a bounded Gaussian
//! random walk, one step per post. A post's embedding is the unit-normalized
//! sum of `signal_strength · state · direction` and isotropic Gaussian noise,
//! where `direction` is a fixed unit vector shared by all users.
//!
//! * Post-level labels threshold the state at the current post; the threshold
//!   is the empirical quantile that yields the configured imbalance ratio.
//! * User-level labels bin the time-averaged state into ordinal classes at
//!   the empirical quantiles given by `user_level_class_props`.
//!
//! Because the walk moves slowly relative to the per-post noise, each extra
//! historical post is another noisy look at nearly the same state, so the
//! recoverable signal grows with the observed history length.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, Payload, Post, TimelineSample};
use crate::error::{invalid, Error, Result};
use crate::model::TaskKind;
use crate::numerics::{RngStream, Vector};

const STATE_BOUND: f64 = 3.0;
const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum HistoryLengths {
    Fixed {
        len: usize,
    },
    /// Uniform integer length in `min..=max`.
    Uniform {
        min: usize,
        max: usize,
    },
    /// Log-normal with the given mean/std, rounded and clipped to `[1, max]`.
    LogNormal {
        mean: f64,
        std: f64,
        max: usize,
    },
}

impl HistoryLengths {
    fn draw(&self, rng: &mut RngStream) -> usize {
        match *self {
            HistoryLengths::Fixed { len } => len,
            HistoryLengths::Uniform { min, max } => min + rng.index(max - min + 1),
            HistoryLengths::LogNormal { mean, std, max } => {
                let s2 = (1.0 + (std / mean).powi(2)).ln();
                let mu = mean.ln() - 0.5 * s2;
                let x = (mu + s2.sqrt() * rng.standard_normal()).exp();
                (x.round() as usize).clamp(1, max)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            HistoryLengths::Fixed { .. } => Ok(()),
            HistoryLengths::Uniform { min, max } if min <= max => Ok(()),
            HistoryLengths::LogNormal { mean, std, max } if mean > 0.0 && std > 0.0 && max >= 1 => {
                Ok(())
            }
            _ => Err(invalid(format!(
                "invalid history length distribution {self:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_users: usize,
    pub task: TaskKind,
    pub history: HistoryLengths,
    /// Majority-to-minority ratio for the binary post-level task.
    pub imbalance_ratio: f64,
    /// Class proportions (lowest risk first) for the ordinal user-level task.
    pub user_level_class_props: Vec<f64>,
    /// In `[0, 1]`; 0 makes labels independent of the embeddings.
    pub signal_strength: f64,
    /// Per-coordinate std of the isotropic embedding noise.
    pub noise_scale: f64,
    /// Per-post std of the latent random walk.
    pub drift: f64,
    pub dim: usize,
    /// Mean gap between consecutive posts, in days.
    pub mean_gap_days: f64,
    /// Users start posting uniformly within this many days.
    pub start_span_days: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    /// Binary post-level data shaped like a 9:1 ideation corpus with up to
    /// 50 historical posts per user.
    pub fn post_level(num_users: usize, seed: u64) -> Self {
        Self {
            num_users,
            task: TaskKind::PostLevel,
            history: HistoryLengths::Fixed { len: 50 },
            imbalance_ratio: 9.0,
            user_level_class_props: vec![],
            signal_strength: 1.0,
            noise_scale: 2.0,
            drift: 0.05,
            dim: 8,
            mean_gap_days: 1.0,
            start_span_days: 365.0,
            seed,
        }
    }

    /// Four ordinal risk classes; history lengths log-normal with mean 18.25
    /// and std 27.45.
    pub fn user_level(num_users: usize, seed: u64) -> Self {
        Self {
            task: TaskKind::UserLevel,
            history: HistoryLengths::LogNormal {
                mean: 18.25,
                std: 27.45,
                max: 1000,
            },
            imbalance_ratio: 1.0,
            user_level_class_props: vec![0.24, 0.24, 0.41, 0.11],
            ..Self::post_level(num_users, seed)
        }
    }

    pub fn num_classes(&self) -> usize {
        match self.task {
            TaskKind::PostLevel => 2,
            TaskKind::UserLevel => self.user_level_class_props.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.history.validate()?;
        if self.num_users == 0 || self.dim == 0 {
            return Err(invalid("num_users and dim must be positive"));
        }
        if !(0.0..=1.0).contains(&self.signal_strength) {
            return Err(invalid("signal_strength must be in [0, 1]"));
        }
        if !(self.noise_scale > 0.0) || !(self.drift >= 0.0) || !(self.mean_gap_days > 0.0) {
            return Err(invalid(
                "noise_scale and mean_gap_days must be > 0, drift >= 0",
            ));
        }
        match self.task {
            TaskKind::PostLevel => {
                if !(self.imbalance_ratio >= 1.0) {
                    return Err(invalid("imbalance ratio must be >= 1"));
                }
            }
            TaskKind::UserLevel => {
                let p = &self.user_level_class_props;
                if p.len() < 2 || p.iter().any(|&x| !(x > 0.0)) {
                    return Err(invalid(
                        "user-level class proportions must be positive, >= 2 classes",
                    ));
                }
                if let HistoryLengths::Fixed { len: 0 } = self.history {
                    return Err(invalid("user-level samples need at least one post"));
                }
            }
        }
        Ok(())
    }
}

struct UserDraw {
    posts: Vec<Post>,
    states: Vec<f64>,
}

fn signal_direction(seed: u64, dim: usize) -> Vector {
    let mut rng = RngStream::keyed(seed, &[0x5157_4e41_4c00]);
    loop {
        let v: Vector = (0..dim).map(|_| rng.standard_normal()).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn draw_user(cfg: &SyntheticConfig, index: usize, direction: &[f64]) -> UserDraw {
    let mut rng = RngStream::keyed(cfg.seed, &[0x7573_6572, index as u64]);
    let n_hist = cfg.history.draw(&mut rng);
    let n_posts = match cfg.task {
        TaskKind::PostLevel => n_hist + 1,
        TaskKind::UserLevel => n_hist.max(1),
    };
    let mut ts = (rng.uniform() * cfg.start_span_days * SECONDS_PER_DAY) as i64;
    let mut state = rng.standard_normal().clamp(-STATE_BOUND, STATE_BOUND);
    let mut posts = Vec::with_capacity(n_posts);
    let mut states = Vec::with_capacity(n_posts);
    for t in 0..n_posts {
        if t > 0 {
            state = (state + cfg.drift * rng.standard_normal()).clamp(-STATE_BOUND, STATE_BOUND);
            // Exponential gap, at least one second.
            let gap = -(1.0 - rng.uniform()).ln() * cfg.mean_gap_days * SECONDS_PER_DAY;
            ts += (gap as i64).max(1);
        }
        let scale = cfg.signal_strength * state;
        let mut emb: Vector = direction
            .iter()
            .map(|&u| scale * u + cfg.noise_scale * rng.standard_normal())
            .collect();
        let norm = emb.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            emb.iter_mut().for_each(|x| *x /= norm);
        }
        posts.push(Post {
            ts,
            payload: Payload::Embedding(emb),
        });
        states.push(state);
    }
    UserDraw { posts, states }
}

/// Indices sorted by score, ascending, ties by index.
fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    idx
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let direction = signal_direction(cfg.seed, cfg.dim);
    let users: Vec<UserDraw> = (0..cfg.num_users)
        .into_par_iter()
        .map(|i| draw_user(cfg, i, &direction))
        .collect();
    let m = cfg.num_users;
    let classes = cfg.num_classes();
    let mut labels = vec![0usize; m];
    match cfg.task {
        TaskKind::PostLevel => {
            let positives = (m as f64 / (cfg.imbalance_ratio + 1.0)).round() as usize;
            if positives == 0 || positives >= m {
                return Err(Error::Infeasible(format!(
                    "ratio {}:1 cannot be realized with {m} users",
                    cfg.imbalance_ratio
                )));
            }
            let finals: Vec<f64> = users.iter().map(|u| *u.states.last().unwrap()).collect();
            for &i in rank_order(&finals).iter().rev().take(positives) {
                labels[i] = 1;
            }
        }
        TaskKind::UserLevel => {
            let means: Vec<f64> = users
                .iter()
                .map(|u| u.states.iter().sum::<f64>() / u.states.len() as f64)
                .collect();
            let total: f64 = cfg.user_level_class_props.iter().sum();
            let mut bounds = Vec::with_capacity(classes);
            let mut acc = 0.0;
            for p in &cfg.user_level_class_props {
                acc += p / total;
                bounds.push((acc * m as f64).round() as usize);
            }
            let mut prev = 0;
            for &b in &bounds {
                if b <= prev {
                    return Err(Error::Infeasible(format!(
                        "class proportions leave an empty class with {m} users"
                    )));
                }
                prev = b;
            }
            for (rank, &i) in rank_order(&means).iter().enumerate() {
                labels[i] = bounds.iter().position(|&b| rank < b).unwrap_or(classes - 1);
            }
        }
    }
    let samples = users
        .into_iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (mut u, label))| {
            let user_id = format!("u{i:06}");
            match cfg.task {
                TaskKind::PostLevel => {
                    let current = u.posts.pop().unwrap();
                    TimelineSample {
                        user_id,
                        ts: current.ts,
                        history: u.posts,
                        current: Some(current),
                        label,
                    }
                }
                TaskKind::UserLevel => TimelineSample {
                    user_id,
                    ts: u.posts.last().unwrap().ts,
                    history: u.posts,
                    current: None,
                    label,
                },
            }
        })
        .collect();
    Ok(Dataset {
        task: cfg.task,
        num_classes: classes,
        samples,
    })
}
