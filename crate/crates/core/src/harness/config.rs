use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{SplitKind, SyntheticConfig, Truncation};
use crate::dp_optimizer::AdamConfig;
use crate::error::{invalid, Result};
use crate::model::{EncoderConfig, TaskKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DataSource {
    /// Regenerated per run with a seed derived from the config's seed and the
    /// run seed, so every repetition sees fresh data.
    Synthetic {
        config: SyntheticConfig,
    },
    Jsonl {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PrivacySetting {
    /// σ = 0, C = ∞.
    NonPrivate,
    Sigma {
        sigma: f64,
        clip_bound: f64,
    },
    /// σ calibrated so the whole run spends at most `epsilon`.
    TargetEpsilon {
        epsilon: f64,
        clip_bound: f64,
    },
}

impl PrivacySetting {
    /// Short label used to group results, e.g. `inf`, `eps=0.6`, `sigma=1.1`.
    pub fn label(&self) -> String {
        match self {
            PrivacySetting::NonPrivate => "inf".into(),
            PrivacySetting::Sigma { sigma, .. } => format!("sigma={sigma}"),
            PrivacySetting::TargetEpsilon { epsilon, .. } => format!("eps={epsilon}"),
        }
    }

    pub fn clip_bound(&self) -> f64 {
        match *self {
            PrivacySetting::NonPrivate => f64::INFINITY,
            PrivacySetting::Sigma { clip_bound, .. }
            | PrivacySetting::TargetEpsilon { clip_bound, .. } => clip_bound,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSettings {
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossSettings {
    fn default() -> Self {
        Self {
            beta: 0.999,
            gamma: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointSelection {
    /// Epoch with the best validation macro F1 (post-level) or graded F
    /// (user-level).
    BestVal,
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSettings {
    pub enabled: bool,
    pub calibration_fraction: f64,
}

impl Default for AttackSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            calibration_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub task: TaskKind,
    /// Defaults to temporal for post-level and stratified for user-level.
    #[serde(default)]
    pub split: Option<SplitKind>,
    #[serde(default)]
    pub truncation: Option<Truncation>,
    /// Majority:minority ratio to subsample to before splitting (binary only).
    #[serde(default)]
    pub imbalance_ratio: Option<f64>,
    pub privacy: PrivacySetting,
    /// Poisson sampling rate.
    pub q: f64,
    pub delta: f64,
    pub encoder: EncoderConfig,
    pub hidden: usize,
    #[serde(default)]
    pub loss: LossSettings,
    pub epochs: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default = "default_selection")]
    pub selection: CheckpointSelection,
    #[serde(default)]
    pub attack: AttackSettings,
    pub seeds: Vec<u64>,
}

fn default_selection() -> CheckpointSelection {
    CheckpointSelection::BestVal
}

/// Clip bound matched to the scale of class-balanced per-sample gradients,
/// which the unnormalized class weights keep near 1e-3.
pub const DEFAULT_CLIP_BOUND: f64 = 0.001;

impl ExperimentConfig {
    /// Desk-scale post-level defaults on synthetic data.
    pub fn synthetic_post_level(num_users: usize) -> Self {
        let synthetic = SyntheticConfig::post_level(num_users, 0);
        Self {
            encoder: EncoderConfig::precomputed(synthetic.dim),
            data: DataSource::Synthetic { config: synthetic },
            task: TaskKind::PostLevel,
            split: None,
            truncation: None,
            imbalance_ratio: None,
            privacy: PrivacySetting::NonPrivate,
            q: 0.05,
            delta: 1e-5,
            hidden: 8,
            loss: LossSettings {
                beta: 0.9999,
                ..LossSettings::default()
            },
            epochs: 10,
            adam: AdamConfig {
                learning_rate: 0.02,
                ..AdamConfig::default()
            },
            selection: CheckpointSelection::BestVal,
            attack: AttackSettings::default(),
            seeds: (0..10).collect(),
        }
    }

    /// Desk-scale user-level (four ordinal classes) defaults on synthetic data.
    pub fn synthetic_user_level(num_users: usize) -> Self {
        let synthetic = SyntheticConfig::user_level(num_users, 0);
        Self {
            data: DataSource::Synthetic { config: synthetic },
            task: TaskKind::UserLevel,
            ..Self::synthetic_post_level(num_users)
        }
    }

    pub fn split_kind(&self) -> SplitKind {
        self.split.unwrap_or(match self.task {
            TaskKind::PostLevel => SplitKind::Temporal,
            TaskKind::UserLevel => SplitKind::Stratified,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if let DataSource::Synthetic { config } = &self.data {
            config.validate()?;
            if config.task != self.task {
                return Err(invalid("synthetic task does not match the experiment task"));
            }
            if config.dim != self.encoder.dim {
                return Err(invalid(format!(
                    "synthetic dim {} does not match encoder dim {}",
                    config.dim, self.encoder.dim
                )));
            }
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(invalid(format!("q must be in (0, 1], got {}", self.q)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid(format!(
                "delta must be in (0, 1), got {}",
                self.delta
            )));
        }
        if self.hidden == 0 {
            return Err(invalid("hidden size must be positive"));
        }
        match self.privacy {
            PrivacySetting::NonPrivate => {}
            PrivacySetting::Sigma { sigma, clip_bound } => {
                if !(sigma > 0.0) || !(clip_bound > 0.0) || !clip_bound.is_finite() {
                    return Err(invalid("sigma and clip bound must be finite and > 0"));
                }
            }
            PrivacySetting::TargetEpsilon {
                epsilon,
                clip_bound,
            } => {
                if !(epsilon > 0.0) || !(clip_bound > 0.0) || !clip_bound.is_finite() {
                    return Err(invalid(
                        "target epsilon and clip bound must be finite and > 0",
                    ));
                }
            }
        }
        if let Some(r) = self.imbalance_ratio {
            if self.task != TaskKind::PostLevel || !(r > 0.0) {
                return Err(invalid(
                    "imbalance ratio needs a binary task and a positive ratio",
                ));
            }
        }
        if !(self.attack.calibration_fraction > 0.0 && self.attack.calibration_fraction < 1.0) {
            return Err(invalid("attack calibration fraction must be in (0, 1)"));
        }
        self.adam.validate()?;
        Ok(())
    }

    /// Canonical JSON without the seed list: the replayable identity of a run
    /// family.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("seeds");
        }
        serde_json::to_string(&v).expect("value serializes")
    }

    /// First 16 hex digits of the SHA-256 of [`Self::canonical_json`].
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        hex::encode(digest)[..16].to_string()
    }

    /// Label for the history axis: `L`, `<n>d`, or `all`.
    pub fn history_label(&self) -> String {
        match self.truncation {
            None => "all".into(),
            Some(Truncation::Posts(n)) => n.to_string(),
            Some(Truncation::Days(d)) => format!("{d}d"),
        }
    }
}
