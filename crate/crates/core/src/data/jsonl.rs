//! JSONL timeline files: one post per line.
//!
//! ```text
//! {"user_id": "u1", "ts": 1700000000, "text": "...", "label": 1}
//! {"user_id": "u1", "ts": 1700000100, "emb": [0.1, -0.3, ...]}
//! ```
//!
//! Exactly one of `text` / `emb` is present; `label` is optional. A user's
//! lines must appear in strictly increasing `ts` order.
//!
//! Post-level datasets produce one sample per labeled post, with every
//! earlier post of that user as history. User-level datasets produce one
//! sample per user whose history is the full timeline and whose label is the
//! last label seen for that user.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Payload, Post, TimelineSample};
use crate::error::{Error, Result};
use crate::model::TaskKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostLine {
    pub user_id: String,
    pub ts: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emb: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

impl PostLine {
    fn payload(&self, line: usize) -> Result<Payload> {
        match (&self.text, &self.emb) {
            (Some(t), None) => Ok(Payload::Text(t.clone())),
            (None, Some(e)) => {
                if e.iter().any(|x| !x.is_finite()) {
                    return Err(schema(line, "non-finite embedding value"));
                }
                Ok(Payload::Embedding(e.clone()))
            }
            _ => Err(schema(line, "exactly one of `text` or `emb` is required")),
        }
    }

    fn from_post(user_id: &str, post: &Post, label: Option<usize>) -> Self {
        let (text, emb) = match &post.payload {
            Payload::Text(t) => (Some(t.clone()), None),
            Payload::Embedding(e) => (None, Some(e.clone())),
        };
        Self {
            user_id: user_id.to_string(),
            ts: post.ts,
            text,
            emb,
            label,
        }
    }
}

fn schema(line: usize, message: impl Into<String>) -> Error {
    Error::Schema {
        line,
        message: message.into(),
    }
}

/// Reads and validates the raw lines (1-based line numbers in errors).
pub fn read_jsonl(path: &Path) -> Result<Vec<PostLine>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    let mut last_ts: HashMap<String, i64> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PostLine =
            serde_json::from_str(&line).map_err(|e| schema(line_no, e.to_string()))?;
        rec.payload(line_no)?;
        if let Some(&prev) = last_ts.get(&rec.user_id) {
            if rec.ts <= prev {
                return Err(schema(
                    line_no,
                    format!("non-monotone timestamp for user {:?}", rec.user_id),
                ));
            }
        }
        last_ts.insert(rec.user_id.clone(), rec.ts);
        out.push(rec);
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}

/// Loads a timeline file into a dataset for `task`.
pub fn ingest_jsonl(path: &Path, task: TaskKind) -> Result<Dataset> {
    let lines = read_jsonl(path)?;
    let mut order: Vec<String> = Vec::new();
    let mut by_user: HashMap<String, Vec<(Post, Option<usize>)>> = HashMap::new();
    for (i, rec) in lines.iter().enumerate() {
        // Line numbers are only needed for errors, which read_jsonl already raised.
        let payload = rec.payload(i + 1)?;
        let entry = by_user.entry(rec.user_id.clone()).or_insert_with(|| {
            order.push(rec.user_id.clone());
            Vec::new()
        });
        entry.push((
            Post {
                ts: rec.ts,
                payload,
            },
            rec.label,
        ));
    }

    let mut samples = Vec::new();
    for user in &order {
        let posts = &by_user[user];
        match task {
            TaskKind::PostLevel => {
                for (k, (post, label)) in posts.iter().enumerate() {
                    if let Some(label) = *label {
                        samples.push(TimelineSample {
                            user_id: user.clone(),
                            ts: post.ts,
                            history: posts[..k].iter().map(|(p, _)| p.clone()).collect(),
                            current: Some(post.clone()),
                            label,
                        });
                    }
                }
            }
            TaskKind::UserLevel => {
                if let Some(label) = posts.iter().rev().find_map(|(_, l)| *l) {
                    samples.push(TimelineSample {
                        user_id: user.clone(),
                        ts: posts.last().unwrap().0.ts,
                        history: posts.iter().map(|(p, _)| p.clone()).collect(),
                        current: None,
                        label,
                    });
                }
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let num_classes = samples.iter().map(|s| s.label).max().unwrap_or(0).max(1) + 1;
    Ok(Dataset {
        task,
        num_classes,
        samples,
    })
}

/// Flattens a dataset back into per-user post lines, merging overlapping
/// histories by timestamp.
pub fn export_lines(dataset: &Dataset) -> Vec<PostLine> {
    let mut order: Vec<&str> = Vec::new();
    let mut by_user: HashMap<&str, BTreeMap<i64, (&Post, Option<usize>)>> = HashMap::new();
    for s in &dataset.samples {
        let timeline = by_user.entry(&s.user_id).or_insert_with(|| {
            order.push(&s.user_id);
            BTreeMap::new()
        });
        let n = s.history.len();
        for (k, p) in s.history.iter().enumerate() {
            let label = (dataset.task == TaskKind::UserLevel && k + 1 == n).then_some(s.label);
            let slot = timeline.entry(p.ts).or_insert((p, None));
            if label.is_some() {
                slot.1 = label;
            }
        }
        if let Some(cur) = &s.current {
            timeline.insert(cur.ts, (cur, Some(s.label)));
        }
    }
    order
        .into_iter()
        .flat_map(|u| {
            by_user[u]
                .values()
                .map(move |(p, label)| PostLine::from_post(u, p, *label))
                .collect::<Vec<_>>()
        })
        .collect()
}

pub fn write_jsonl(path: &Path, lines: &[PostLine]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for line in lines {
        serde_json::to_writer(&mut w, line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_jsonl(dataset: &Dataset, path: &Path) -> Result<()> {
    write_jsonl(path, &export_lines(dataset))
}
