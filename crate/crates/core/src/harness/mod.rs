//! Experiment orchestration: single runs, sweeps, paired comparisons and
//! reports.

mod compare;
mod config;
mod report;
mod run;
mod sweep;

use std::path::{Path, PathBuf};

pub use compare::{compare, Comparison};
pub use config::{
    AttackSettings, CheckpointSelection, DataSource, ExperimentConfig, LossSettings,
    PrivacySetting, DEFAULT_CLIP_BOUND,
};
pub use report::{
    aggregate, header, read_results, report, write_results, AggregateRow, ReportFiles,
    ResultsAppender, EXTRA_COLUMNS, METRIC_COLUMNS,
};
pub use run::{
    membership_attack, minority_class, prepare, resolve_privacy, run, run_and_save, training_loss,
    Prepared, RunOutcome, RunResult,
};
pub use sweep::{run_configs, sweep, SweepGrid};

use crate::error::{invalid, Result};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "HISTDP_OUT_DIR";

pub fn config_path(dir: &Path, hash: &str) -> PathBuf {
    dir.join("configs").join(format!("{hash}.json"))
}

/// Stores `config` under `<dir>/configs/<hash>.json` so rows can be replayed.
pub fn save_config(dir: &Path, config: &ExperimentConfig) -> Result<PathBuf> {
    let path = config_path(dir, &config.config_hash());
    std::fs::create_dir_all(path.parent().expect("has parent"))?;
    std::fs::write(&path, serde_json::to_string_pretty(config)?)?;
    Ok(path)
}

/// Loads the config stored for `hash` and checks that it still hashes to it.
pub fn load_config(dir: &Path, hash: &str) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(config_path(dir, hash))?;
    let config: ExperimentConfig = serde_json::from_str(&text)?;
    if config.config_hash() != hash {
        return Err(invalid(format!("stored config does not hash to {hash}")));
    }
    Ok(config)
}

/// Re-runs the row identified by `(hash, seed)` from its stored config.
pub fn replay(dir: &Path, hash: &str, seed: u64) -> Result<RunResult> {
    Ok(run(&load_config(dir, hash)?, seed)?.result)
}
