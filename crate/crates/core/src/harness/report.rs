use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::run::RunResult;
use crate::error::{invalid, Error, Result};
use crate::model::TaskKind;
use crate::stats::summarize;

/// Fixed leading columns of the results CSV.
pub const METRIC_COLUMNS: [&str; 12] = [
    "macro_f1",
    "recall_minority",
    "precision_minority",
    "graded_p",
    "graded_r",
    "graded_f",
    "epsilon",
    "pl",
    "seed",
    "history_len",
    "sigma",
    "clip",
];

/// Columns after the fixed ones.
pub const EXTRA_COLUMNS: [&str; 17] = [
    "config_hash",
    "status",
    "task",
    "privacy",
    "imbalance_ratio",
    "q",
    "delta",
    "steps",
    "attack_tpr",
    "attack_fpr",
    "bound_pass",
    "bound_margin",
    "best_epoch",
    "n_train",
    "n_test",
    "epsilon_trace",
    "wall_time_s",
];

pub fn header() -> Vec<&'static str> {
    METRIC_COLUMNS
        .iter()
        .chain(EXTRA_COLUMNS.iter())
        .copied()
        .collect()
}

fn task_name(t: TaskKind) -> &'static str {
    match t {
        TaskKind::PostLevel => "post_level",
        TaskKind::UserLevel => "user_level",
    }
}

impl RunResult {
    /// Row in [`header`] order. Floats use the shortest round-trip form, so
    /// parsing a row back yields bit-identical values.
    pub fn to_record(&self) -> Vec<String> {
        let f = |x: f64| format!("{x}");
        vec![
            f(self.macro_f1),
            f(self.recall_minority),
            f(self.precision_minority),
            f(self.graded_p),
            f(self.graded_r),
            f(self.graded_f),
            f(self.epsilon),
            f(self.pl),
            self.seed.to_string(),
            self.history_len.clone(),
            f(self.sigma),
            f(self.clip),
            self.config_hash.clone(),
            self.status.clone(),
            task_name(self.task).into(),
            self.privacy.clone(),
            f(self.imbalance_ratio),
            f(self.q),
            f(self.delta),
            self.steps.to_string(),
            f(self.attack_tpr),
            f(self.attack_fpr),
            self.bound_pass.to_string(),
            f(self.bound_margin),
            self.best_epoch.to_string(),
            self.n_train.to_string(),
            self.n_test.to_string(),
            self.epsilon_trace
                .iter()
                .map(|e| f(*e))
                .collect::<Vec<_>>()
                .join(";"),
            f(self.wall_time_s),
        ]
    }

    pub fn from_record(rec: &csv::StringRecord) -> Result<Self> {
        let cols = header();
        if rec.len() != cols.len() {
            return Err(invalid(format!(
                "results row has {} fields, expected {}",
                rec.len(),
                cols.len()
            )));
        }
        let get = |name: &str| -> &str {
            let i = cols.iter().position(|c| *c == name).expect("known column");
            &rec[i]
        };
        let num = |name: &str| -> Result<f64> {
            get(name)
                .parse::<f64>()
                .map_err(|_| invalid(format!("column {name}: bad number {:?}", get(name))))
        };
        let int = |name: &str| -> Result<u64> {
            get(name)
                .parse::<u64>()
                .map_err(|_| invalid(format!("column {name}: bad integer {:?}", get(name))))
        };
        let task = match get("task") {
            "post_level" => TaskKind::PostLevel,
            "user_level" => TaskKind::UserLevel,
            other => return Err(invalid(format!("unknown task {other:?}"))),
        };
        let trace = get("epsilon_trace");
        let epsilon_trace = if trace.is_empty() {
            vec![]
        } else {
            trace
                .split(';')
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| invalid(format!("bad epsilon trace {trace:?}")))
                })
                .collect::<Result<Vec<_>>>()?
        };
        Ok(RunResult {
            config_hash: get("config_hash").to_string(),
            seed: int("seed")?,
            status: get("status").to_string(),
            task,
            history_len: get("history_len").to_string(),
            privacy: get("privacy").to_string(),
            imbalance_ratio: num("imbalance_ratio")?,
            sigma: num("sigma")?,
            clip: num("clip")?,
            q: num("q")?,
            delta: num("delta")?,
            steps: int("steps")?,
            epsilon: num("epsilon")?,
            macro_f1: num("macro_f1")?,
            recall_minority: num("recall_minority")?,
            precision_minority: num("precision_minority")?,
            graded_p: num("graded_p")?,
            graded_r: num("graded_r")?,
            graded_f: num("graded_f")?,
            pl: num("pl")?,
            attack_tpr: num("attack_tpr")?,
            attack_fpr: num("attack_fpr")?,
            bound_pass: get("bound_pass") == "true",
            bound_margin: num("bound_margin")?,
            best_epoch: int("best_epoch")? as usize,
            n_train: int("n_train")? as usize,
            n_test: int("n_test")? as usize,
            epsilon_trace,
            wall_time_s: num("wall_time_s")?,
        })
    }

    /// Named metric used by comparisons and aggregation.
    pub fn metric(&self, name: &str) -> Result<f64> {
        Ok(match name {
            "macro_f1" => self.macro_f1,
            "recall_minority" => self.recall_minority,
            "precision_minority" => self.precision_minority,
            "graded_p" => self.graded_p,
            "graded_r" => self.graded_r,
            "graded_f" => self.graded_f,
            "epsilon" => self.epsilon,
            "pl" => self.pl,
            other => return Err(invalid(format!("unknown metric {other:?}"))),
        })
    }
}

pub fn write_results(path: &Path, rows: &[RunResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header())?;
    for r in rows {
        w.write_record(r.to_record())?;
    }
    w.flush()?;
    Ok(())
}

/// Appends rows, writing the header first if the file is new or empty.
pub struct ResultsAppender {
    writer: csv::Writer<File>,
}

impl ResultsAppender {
    /// A partial last line left by an interrupted write is dropped first so
    /// the next row starts on its own line.
    pub fn open(path: &Path) -> Result<Self> {
        if let Ok(bytes) = std::fs::read(path) {
            if !bytes.is_empty() && !bytes.ends_with(b"\n") {
                let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
                OpenOptions::new()
                    .write(true)
                    .open(path)?
                    .set_len(keep as u64)?;
            }
        }
        let fresh = std::fs::metadata(path)
            .map(|m| m.len() == 0)
            .unwrap_or(true);
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut writer = csv::Writer::from_writer(file);
        if fresh {
            writer.write_record(header())?;
            writer.flush()?;
        }
        Ok(Self { writer })
    }

    /// Writes one row and flushes so an interrupted sweep keeps it.
    pub fn append(&mut self, row: &RunResult) -> Result<()> {
        self.writer.write_record(row.to_record())?;
        self.writer.flush()?;
        Ok(())
    }
}

/// Reads a results CSV. A truncated final line (from an interrupted write)
/// is ignored.
pub fn read_results(path: &Path) -> Result<Vec<RunResult>> {
    let mut r = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let expected = header().len();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != expected {
            continue;
        }
        rows.push(RunResult::from_record(&rec)?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub group: String,
    pub history_len: String,
    pub privacy: String,
    pub imbalance_ratio: f64,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

const AGGREGATED: [&str; 8] = [
    "macro_f1",
    "recall_minority",
    "precision_minority",
    "graded_p",
    "graded_r",
    "graded_f",
    "pl",
    "epsilon",
];

/// Mean and 95% t-interval of every metric over the successful rows of each
/// `(history_len, privacy, imbalance_ratio)` cell.
pub fn aggregate(rows: &[RunResult]) -> Result<Vec<AggregateRow>> {
    let mut groups: BTreeMap<(String, String, String), Vec<&RunResult>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.is_ok()) {
        groups
            .entry((
                r.history_len.clone(),
                r.privacy.clone(),
                format!("{}", r.imbalance_ratio),
            ))
            .or_default()
            .push(r);
    }
    let mut out = Vec::new();
    for ((history_len, privacy, ratio), members) in groups {
        for metric in AGGREGATED {
            let values = members
                .iter()
                .map(|r| r.metric(metric))
                .collect::<Result<Vec<_>>>()?;
            if values.iter().any(|v| v.is_nan()) {
                continue;
            }
            let s = if values.iter().all(|v| *v == values[0]) {
                // Constant columns (including +inf) have a zero-width interval.
                crate::stats::Summary {
                    n: values.len(),
                    mean: values[0],
                    std: 0.0,
                    ci_low: values[0],
                    ci_high: values[0],
                }
            } else {
                summarize(&values, 0.95)?
            };
            out.push(AggregateRow {
                group: format!("L={history_len},{privacy},ratio={ratio}"),
                history_len: history_len.clone(),
                privacy: privacy.clone(),
                imbalance_ratio: ratio.parse().unwrap_or(f64::NAN),
                metric: metric.to_string(),
                n: s.n,
                mean: s.mean,
                std: s.std,
                ci_low: s.ci_low,
                ci_high: s.ci_high,
            });
        }
    }
    Ok(out)
}

fn write_aggregate(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record([
            "group",
            "history_len",
            "privacy",
            "imbalance_ratio",
            "metric",
            "n",
            "mean",
            "std",
            "ci_low",
            "ci_high",
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Files written by [`report`].
#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub results: PathBuf,
    pub by_history_privacy: PathBuf,
    pub by_imbalance: PathBuf,
}

/// Writes the tidy results table and the per-figure aggregation files.
pub fn report(rows: &[RunResult], dir: &Path) -> Result<ReportFiles> {
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    std::fs::create_dir_all(dir)?;
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| (&a.config_hash, a.seed).cmp(&(&b.config_hash, b.seed)));
    let files = ReportFiles {
        results: dir.join("results.csv"),
        by_history_privacy: dir.join("by_history_privacy.csv"),
        by_imbalance: dir.join("by_imbalance.csv"),
    };
    write_results(&files.results, &sorted)?;
    let agg = aggregate(&sorted)?;
    write_aggregate(&files.by_history_privacy, &agg)?;
    let imbalance: Vec<AggregateRow> = agg
        .into_iter()
        .filter(|r| !r.imbalance_ratio.is_nan())
        .collect();
    write_aggregate(&files.by_imbalance, &imbalance)?;
    Ok(files)
}
