//! Differentially private training of history-aware sequence classifiers
//! over user timelines, with privacy accounting, membership-inference
//! evaluation and an experiment harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN
pub mod accountant;
pub mod attack;
pub mod data;
pub mod dp_optimizer;
pub mod error;
pub mod harness;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod stats;

pub use accountant::{calibrate_sigma, epsilon_for, PrivacySpec, RdpCurve};
pub use attack::{dp_bound_check, score_samples, threshold_attack, AttackResult, AttackSplit};
pub use data::{Dataset, DatasetSplit, SplitKind, SyntheticConfig, Truncation};
pub use dp_optimizer::{train, AdamConfig, TrainConfig, TrainOutput};
pub use error::{Error, Result};
pub use loss::CbFocalConfig;
pub use metrics::{AttackRates, GradedMetrics, LabeledPredictions};
pub use model::{EncodedSample, EncoderConfig, HistLstm, ModelConfig, TaskKind};
pub use numerics::{RngStream, Vector};
