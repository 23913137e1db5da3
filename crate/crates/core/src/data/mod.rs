//! User timelines: the in-memory dataset, the synthetic generator, JSONL
//! ingestion/export, splits, history truncation and imbalance subsampling.

mod jsonl;
mod split;
mod synthetic;

pub use jsonl::{export_jsonl, export_lines, ingest_jsonl, read_jsonl, write_jsonl, PostLine};
pub use split::{
    split, split_fractions, subsample_imbalance, truncate_history, DatasetSplit, SplitKind,
    Truncation,
};
pub use synthetic::{generate_synthetic, HistoryLengths, SyntheticConfig};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{encode_post, EncodedSample, EncoderConfig, TaskKind};

/// Raw content of a post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    Text(String),
    Embedding(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    /// Seconds; strictly increasing within a user.
    pub ts: i64,
    pub payload: Payload,
}

/// One labeled unit: a user's earlier posts (oldest first), the post under
/// assessment for post-level tasks, and the label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineSample {
    pub user_id: String,
    /// Prediction time: the current post's timestamp (post-level) or the
    /// latest post's timestamp (user-level).
    pub ts: i64,
    pub history: Vec<Post>,
    pub current: Option<Post>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub task: TaskKind,
    pub num_classes: usize,
    pub samples: Vec<TimelineSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Subset by indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            task: self.task,
            num_classes: self.num_classes,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    pub fn max_history(&self) -> usize {
        self.samples
            .iter()
            .map(|s| s.history.len())
            .max()
            .unwrap_or(0)
    }

    /// Embeds every post with the frozen encoder.
    pub fn encode(&self, encoder: &EncoderConfig) -> Result<Vec<EncodedSample>> {
        self.samples
            .iter()
            .map(|s| {
                let history = s
                    .history
                    .iter()
                    .map(|p| encode_post(&p.payload, encoder))
                    .collect::<Result<Vec<_>>>()?;
                let current = match (self.task, &s.current) {
                    (TaskKind::PostLevel, Some(p)) => Some(encode_post(&p.payload, encoder)?),
                    _ => None,
                };
                Ok(EncodedSample {
                    history,
                    current,
                    label: s.label,
                })
            })
            .collect()
    }
}
