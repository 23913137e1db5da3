use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{CheckpointSelection, DataSource, ExperimentConfig, PrivacySetting};
use crate::accountant::{calibrate_sigma, PrivacySpec};
use crate::attack::{dp_bound_check, score_samples, threshold_attack, AttackResult, AttackSplit};
use crate::data::{
    generate_synthetic, ingest_jsonl, split, subsample_imbalance, truncate_history, Dataset,
    DatasetSplit,
};
use crate::dp_optimizer::{steps_per_epoch, train_with, TrainConfig};
use crate::error::{invalid, Error, Result};
use crate::loss::CbFocalConfig;
use crate::metrics::{class_precision, class_recall, graded_metrics, macro_f1, LabeledPredictions};
use crate::model::{EncodedSample, HistLstm, ModelConfig, TaskKind};
use crate::numerics::{stream_key, RngStream};

const DATA_STREAM: u64 = 0x6461_7461;
const SUBSAMPLE_STREAM: u64 = 0x7375_6273;
const SPLIT_STREAM: u64 = 0x7370_6c74;
const INIT_STREAM: u64 = 0x696e_6974;
const TRAIN_STREAM: u64 = 0x0074_726e;
const ATTACK_STREAM: u64 = 0x0061_746b;

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config_hash: String,
    pub seed: u64,
    /// `ok`, or `failed: <reason>`.
    pub status: String,
    pub task: TaskKind,
    pub history_len: String,
    pub privacy: String,
    /// NaN when no subsampling was requested.
    pub imbalance_ratio: f64,
    pub sigma: f64,
    pub clip: f64,
    pub q: f64,
    pub delta: f64,
    pub steps: u64,
    /// `+inf` for non-private runs.
    pub epsilon: f64,
    pub macro_f1: f64,
    pub recall_minority: f64,
    pub precision_minority: f64,
    pub graded_p: f64,
    pub graded_r: f64,
    pub graded_f: f64,
    pub pl: f64,
    pub attack_tpr: f64,
    pub attack_fpr: f64,
    pub bound_pass: bool,
    pub bound_margin: f64,
    pub best_epoch: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// ε after each epoch.
    pub epsilon_trace: Vec<f64>,
    pub wall_time_s: f64,
}

impl RunResult {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    /// Placeholder row for a run that errored.
    pub fn failed(config: &ExperimentConfig, seed: u64, err: &Error) -> Self {
        Self {
            config_hash: config.config_hash(),
            seed,
            status: format!("failed: {err}"),
            task: config.task,
            history_len: config.history_label(),
            privacy: config.privacy.label(),
            imbalance_ratio: config.imbalance_ratio.unwrap_or(f64::NAN),
            sigma: f64::NAN,
            clip: config.privacy.clip_bound(),
            q: config.q,
            delta: config.delta,
            steps: 0,
            epsilon: f64::NAN,
            macro_f1: f64::NAN,
            recall_minority: f64::NAN,
            precision_minority: f64::NAN,
            graded_p: f64::NAN,
            graded_r: f64::NAN,
            graded_f: f64::NAN,
            pl: f64::NAN,
            attack_tpr: f64::NAN,
            attack_fpr: f64::NAN,
            bound_pass: false,
            bound_margin: f64::NAN,
            best_epoch: 0,
            n_train: 0,
            n_test: 0,
            epsilon_trace: vec![],
            wall_time_s: 0.0,
        }
    }

    /// Equality on everything except wall time.
    pub fn same_outcome(&self, other: &RunResult) -> bool {
        let mut a = self.clone();
        let mut b = other.clone();
        a.wall_time_s = 0.0;
        b.wall_time_s = 0.0;
        // NaN never equals itself, so compare the serialized form.
        serde_json::to_string(&a).ok() == serde_json::to_string(&b).ok()
    }
}

pub struct RunOutcome {
    pub result: RunResult,
    pub model: HistLstm,
    pub attack: Option<AttackResult>,
}

/// Dataset, split and encoded samples for one (config, seed).
pub struct Prepared {
    pub dataset: Dataset,
    pub split: DatasetSplit,
    pub encoded: Vec<EncodedSample>,
}

impl Prepared {
    pub fn subset(&self, idx: &[usize]) -> Vec<EncodedSample> {
        idx.iter().map(|&i| self.encoded[i].clone()).collect()
    }
}

/// Loads or generates the dataset and applies subsampling, split and
/// truncation exactly as a run would.
pub fn prepare(config: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let mut dataset = match &config.data {
        DataSource::Synthetic { config: syn } => {
            let mut syn = syn.clone();
            syn.seed = stream_key(&[DATA_STREAM, syn.seed, seed]);
            generate_synthetic(&syn)?
        }
        DataSource::Jsonl { path } => ingest_jsonl(path, config.task)?,
    };
    if dataset.task != config.task {
        return Err(invalid("dataset task does not match the experiment task"));
    }
    if let Some(ratio) = config.imbalance_ratio {
        dataset = subsample_imbalance(&dataset, ratio, stream_key(&[SUBSAMPLE_STREAM, seed]))?;
    }
    let split = split(
        &dataset,
        config.split_kind(),
        stream_key(&[SPLIT_STREAM, seed]),
    )?;
    if let Some(t) = config.truncation {
        dataset = truncate_history(&dataset, t);
    }
    let encoded = dataset.encode(&config.encoder)?;
    Ok(Prepared {
        dataset,
        split,
        encoded,
    })
}

/// Noise multiplier for the run, calibrating when a target ε is given.
pub fn resolve_privacy(config: &ExperimentConfig, n_train: usize) -> Result<PrivacySpec> {
    let steps = config.epochs as u64 * steps_per_epoch(config.q);
    let (sigma, clip_bound) = match config.privacy {
        PrivacySetting::NonPrivate => (0.0, f64::INFINITY),
        PrivacySetting::Sigma { sigma, clip_bound } => (sigma, clip_bound),
        PrivacySetting::TargetEpsilon {
            epsilon,
            clip_bound,
        } => (
            calibrate_sigma(epsilon, config.delta, config.q, steps)?,
            clip_bound,
        ),
    };
    let spec = PrivacySpec {
        q: config.q,
        sigma,
        clip_bound,
        delta: config.delta,
        steps,
    };
    spec.validate()?;
    if !spec.is_non_private() && spec.delta_too_large(n_train) {
        return Err(invalid(format!(
            "delta {} must be below 1/n_train = {}",
            spec.delta,
            1.0 / n_train as f64
        )));
    }
    Ok(spec)
}

/// The class with the fewest training samples (lowest index on ties).
pub fn minority_class(labels: &[usize], classes: usize) -> usize {
    let mut counts = vec![0usize; classes];
    for &y in labels {
        counts[y] += 1;
    }
    (0..classes).min_by_key(|&c| (counts[c], c)).unwrap_or(0)
}

struct Evaluation {
    macro_f1: f64,
    recall_minority: f64,
    precision_minority: f64,
    graded_p: f64,
    graded_r: f64,
    graded_f: f64,
}

fn evaluate(
    model: &HistLstm,
    samples: &[EncodedSample],
    classes: usize,
    minority: usize,
) -> Result<Evaluation> {
    use rayon::prelude::*;
    let predicted = samples
        .par_iter()
        .map(|s| model.predict(s))
        .collect::<Result<Vec<_>>>()?;
    let truth = samples.iter().map(|s| s.label).collect();
    let preds = LabeledPredictions::new(truth, predicted, classes)?;
    let graded = graded_metrics(&preds)?;
    Ok(Evaluation {
        macro_f1: macro_f1(&preds)?,
        recall_minority: class_recall(&preds, minority)?,
        precision_minority: class_precision(&preds, minority)?,
        graded_p: graded.precision,
        graded_r: graded.recall,
        graded_f: graded.fscore,
    })
}

/// Class-balanced focal loss weighted by the training-split class counts.
pub fn training_loss(config: &ExperimentConfig, prep: &Prepared) -> Result<CbFocalConfig> {
    let labels: Vec<usize> = prep
        .split
        .train
        .iter()
        .map(|&i| prep.encoded[i].label)
        .collect();
    CbFocalConfig::from_labels(
        config.loss.beta,
        config.loss.gamma,
        &labels,
        prep.dataset.num_classes,
    )
}

/// Loss-threshold attack with members drawn from the training split and an
/// equal number of non-members from validation and test.
pub fn membership_attack(
    model: &HistLstm,
    prep: &Prepared,
    loss: &CbFocalConfig,
    calibration_fraction: f64,
    seed: u64,
) -> Result<AttackResult> {
    let mut rng = RngStream::keyed(seed, &[ATTACK_STREAM]);
    let held_out: Vec<usize> = prep
        .split
        .val
        .iter()
        .chain(&prep.split.test)
        .copied()
        .collect();
    let split = AttackSplit::balanced(&prep.split.train, &held_out, &mut rng)?;
    let members = score_samples(model, &prep.subset(&split.members), loss)?;
    let non_members = score_samples(model, &prep.subset(&split.non_members), loss)?;
    threshold_attack(&members, &non_members, calibration_fraction, &mut rng)
}

/// Trains, evaluates and attacks one (config, seed). Deterministic in both.
pub fn run(config: &ExperimentConfig, seed: u64) -> Result<RunOutcome> {
    let hash = config.config_hash();
    run_inner(config, seed).map_err(|e| Error::Run {
        config_hash: hash,
        seed,
        source: Box::new(e),
    })
}

fn run_inner(config: &ExperimentConfig, seed: u64) -> Result<RunOutcome> {
    let started = Instant::now();
    config.validate()?;
    let prep = prepare(config, seed)?;
    let classes = prep.dataset.num_classes;
    let train_set = prep.subset(&prep.split.train);
    let val_set = prep.subset(&prep.split.val);
    let test_set = prep.subset(&prep.split.test);
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let train_labels: Vec<usize> = train_set.iter().map(|s| s.label).collect();
    let minority = minority_class(&train_labels, classes);
    let loss = training_loss(config, &prep)?;
    let privacy = resolve_privacy(config, train_set.len())?;

    let model_cfg = ModelConfig {
        task: config.task,
        encoder: config.encoder,
        hidden: config.hidden,
        classes,
    };
    let model = HistLstm::new(model_cfg, &mut RngStream::keyed(seed, &[INIT_STREAM]))?;
    let train_cfg = TrainConfig {
        epochs: config.epochs,
        adam: config.adam,
    };

    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let select_on_val = config.selection == CheckpointSelection::BestVal && !val_set.is_empty();
    let out = train_with(
        model,
        &train_set,
        &privacy,
        &loss,
        &train_cfg,
        &RngStream::keyed(seed, &[TRAIN_STREAM]),
        |report, current| {
            if select_on_val {
                let e = evaluate(current, &val_set, classes, minority)?;
                let score = match config.task {
                    TaskKind::PostLevel => e.macro_f1,
                    TaskKind::UserLevel => e.graded_f,
                };
                if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
                    best = Some((score, report.epoch, current.params().to_vec()));
                }
            }
            Ok(())
        },
    )?;
    let (best_epoch, model) = match best {
        Some((_, epoch, params)) => (epoch, HistLstm::from_params(model_cfg, params)?),
        None => (config.epochs, out.model.clone()),
    };

    let eval = evaluate(&model, &test_set, classes, minority)?;
    let epsilon = out.final_epsilon();
    let epsilon = if privacy.is_non_private() {
        f64::INFINITY
    } else {
        epsilon
    };

    let mut attack = None;
    let (mut pl, mut tpr, mut fpr, mut bound_pass, mut bound_margin) =
        (f64::NAN, f64::NAN, f64::NAN, true, f64::NAN);
    if config.attack.enabled {
        let result = membership_attack(
            &model,
            &prep,
            &loss,
            config.attack.calibration_fraction,
            seed,
        )?;
        let check = dp_bound_check(&result, epsilon, privacy.delta);
        pl = result.pl;
        tpr = result.rates.tpr;
        fpr = result.rates.fpr;
        bound_pass = check.pass;
        bound_margin = check.margin;
        attack = Some(result);
    }

    let result = RunResult {
        config_hash: config.config_hash(),
        seed,
        status: "ok".into(),
        task: config.task,
        history_len: config.history_label(),
        privacy: config.privacy.label(),
        imbalance_ratio: config.imbalance_ratio.unwrap_or(f64::NAN),
        sigma: privacy.sigma,
        clip: privacy.clip_bound,
        q: privacy.q,
        delta: privacy.delta,
        steps: out.steps,
        epsilon,
        macro_f1: eval.macro_f1,
        recall_minority: eval.recall_minority,
        precision_minority: eval.precision_minority,
        graded_p: eval.graded_p,
        graded_r: eval.graded_r,
        graded_f: eval.graded_f,
        pl,
        attack_tpr: tpr,
        attack_fpr: fpr,
        bound_pass,
        bound_margin,
        best_epoch,
        n_train: train_set.len(),
        n_test: test_set.len(),
        epsilon_trace: out.epsilons.clone(),
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    Ok(RunOutcome {
        result,
        model,
        attack,
    })
}

/// Runs and, when `out_dir` is given, writes the checkpoint and the config.
pub fn run_and_save(
    config: &ExperimentConfig,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<RunOutcome> {
    let outcome = run(config, seed)?;
    if let Some(dir) = out_dir {
        super::save_config(dir, config)?;
        let ckpt = dir.join("checkpoints");
        std::fs::create_dir_all(&ckpt)?;
        outcome
            .model
            .save(&ckpt.join(format!("{}_{}.json", outcome.result.config_hash, seed)))?;
    }
    Ok(outcome)
}
