use std::collections::HashSet;
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, PrivacySetting};
use super::report::{read_results, ResultsAppender};
use super::run::{run, RunResult};
use crate::data::Truncation;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub history_lengths: Vec<usize>,
    pub privacy: Vec<PrivacySetting>,
    /// Optional imbalance axis; empty keeps the base config's setting.
    #[serde(default)]
    pub imbalance_ratios: Vec<f64>,
    pub repetitions: usize,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.history_lengths.is_empty() || self.privacy.is_empty() || self.repetitions == 0 {
            return Err(invalid("sweep axes must be nonempty and repetitions >= 1"));
        }
        Ok(())
    }

    /// Cross product of the axes applied to `base`, seeds `0..repetitions`.
    pub fn expand(&self, base: &ExperimentConfig) -> Result<Vec<ExperimentConfig>> {
        self.validate()?;
        let ratios: Vec<Option<f64>> = if self.imbalance_ratios.is_empty() {
            vec![base.imbalance_ratio]
        } else {
            self.imbalance_ratios.iter().map(|&r| Some(r)).collect()
        };
        let mut out = Vec::new();
        for ratio in &ratios {
            for &l in &self.history_lengths {
                for p in &self.privacy {
                    let mut cfg = base.clone();
                    cfg.truncation = Some(Truncation::Posts(l));
                    cfg.privacy = *p;
                    cfg.imbalance_ratio = *ratio;
                    cfg.seeds = (0..self.repetitions as u64).collect();
                    cfg.validate()?;
                    out.push(cfg);
                }
            }
        }
        Ok(out)
    }
}

/// Runs every (config, seed) pair, appending each row to `results_path` as
/// soon as it finishes. Pairs with an `ok` row already in the file are
/// skipped, so an interrupted sweep resumes where it stopped. Failed runs are
/// recorded with a `failed:` status and do not stop the sweep.
///
/// Returns the rows for `configs`, one per (config, seed), ordered by config
/// then seed.
pub fn run_configs(
    configs: &[ExperimentConfig],
    results_path: &Path,
    out_dir: Option<&Path>,
) -> Result<Vec<RunResult>> {
    let existing = if results_path.exists() {
        read_results(results_path)?
    } else {
        vec![]
    };
    let done: HashSet<(String, u64)> = existing
        .iter()
        .filter(|r| r.is_ok())
        .map(|r| (r.config_hash.clone(), r.seed))
        .collect();
    if let Some(dir) = out_dir {
        for c in configs {
            super::save_config(dir, c)?;
        }
    }
    let jobs: Vec<(&ExperimentConfig, u64)> = configs
        .iter()
        .flat_map(|c| c.seeds.iter().map(move |&s| (c, s)))
        .filter(|(c, s)| !done.contains(&(c.config_hash(), *s)))
        .collect();
    let writer = Mutex::new(ResultsAppender::open(results_path)?);
    jobs.par_iter().try_for_each(|&(cfg, seed)| -> Result<()> {
        let row = match run(cfg, seed) {
            Ok(outcome) => outcome.result,
            Err(e) => RunResult::failed(cfg, seed, &e),
        };
        writer.lock().expect("writer lock").append(&row)
    })?;

    let all = read_results(results_path)?;
    let mut rows = Vec::new();
    for c in configs {
        let hash = c.config_hash();
        for &s in &c.seeds {
            // Latest row wins, preferring successes.
            let pick = all
                .iter()
                .rev()
                .filter(|r| r.config_hash == hash && r.seed == s)
                .max_by_key(|r| r.is_ok());
            if let Some(r) = pick {
                rows.push(r.clone());
            }
        }
    }
    Ok(rows)
}

pub fn sweep(
    grid: &SweepGrid,
    base: &ExperimentConfig,
    results_path: &Path,
    out_dir: Option<&Path>,
) -> Result<Vec<RunResult>> {
    run_configs(&grid.expand(base)?, results_path, out_dir)
}
