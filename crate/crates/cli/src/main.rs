use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use histdp_core::accountant::{calibrate_sigma, epsilon_for};
use histdp_core::attack::dp_bound_check;
use histdp_core::data::{export_jsonl, generate_synthetic, SplitKind, SyntheticConfig, Truncation};
use histdp_core::harness::{
    compare, header, membership_attack, prepare, read_results, report, run_and_save, sweep,
    training_loss, CheckpointSelection, DataSource, ExperimentConfig, PrivacySetting,
    ResultsAppender, RunResult, SweepGrid, DEFAULT_CLIP_BOUND,
};
use histdp_core::HistLstm;

#[derive(Parser)]
#[command(
    name = "histdp",
    version,
    about = "Differentially private history-aware risk classification lab"
)]
struct Cli {
    /// Directory for results, configs and checkpoints.
    #[arg(
        long,
        env = "HISTDP_OUT_DIR",
        default_value = "histdp-out",
        global = true
    )]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as JSONL.
    GenerateData(GenerateArgs),
    /// Train, evaluate and attack one config for each of its seeds.
    Train(TrainArgs),
    /// Run a grid of history lengths x privacy budgets (x imbalance ratios).
    Sweep(SweepArgs),
    /// Membership-inference attack on a saved checkpoint.
    Attack(AttackArgs),
    /// Epsilon spent by a run.
    Accountant(AccountantArgs),
    /// Noise multiplier for a target epsilon.
    Calibrate(CalibrateArgs),
    /// Paired Wilcoxon comparison of two result sets.
    Compare(CompareArgs),
    /// Aggregate a results CSV into report files.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    PostLevel,
    UserLevel,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Temporal,
    Stratified,
}

impl From<SplitArg> for SplitKind {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Temporal => SplitKind::Temporal,
            SplitArg::Stratified => SplitKind::Stratified,
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// SyntheticConfig JSON; defaults come from --task otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "post-level")]
    task: TaskArg,
    #[arg(long, default_value_t = 5000)]
    users: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override any config key, e.g. `--set noise_scale=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Defaults to `<out-dir>/data.jsonl`.
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Base experiment config and the flags that override it.
#[derive(Args)]
struct ConfigArgs {
    /// ExperimentConfig JSON; a synthetic preset for --task otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "post-level")]
    task: TaskArg,
    /// Users in the synthetic preset.
    #[arg(long, default_value_t = 5000)]
    users: usize,
    /// Train on a JSONL dataset instead of synthetic data.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Keep only the latest L historical posts.
    #[arg(long)]
    history: Option<usize>,
    /// Keep only historical posts from the last D days.
    #[arg(long, conflicts_with = "history")]
    history_days: Option<f64>,
    #[arg(long)]
    imbalance_ratio: Option<f64>,
    #[arg(long, conflicts_with_all = ["epsilon", "non_private"])]
    sigma: Option<f64>,
    /// Target epsilon; sigma is calibrated for the whole run.
    #[arg(long, conflicts_with = "non_private")]
    epsilon: Option<f64>,
    #[arg(long)]
    clip_bound: Option<f64>,
    #[arg(long)]
    non_private: bool,
    /// Override any config key by dotted path, e.g. `--set loss.gamma=1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// SweepGrid JSON; replaces the axis flags below.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [0usize, 1, 5, 10, 25, 50])]
    history_lengths: Vec<usize>,
    /// `inf` is the non-private run.
    #[arg(long, value_delimiter = ',', default_values_t = [f64::INFINITY, 2.6, 0.6])]
    epsilons: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    imbalance_ratios: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    repetitions: usize,
    /// Defaults to `<out-dir>/results.csv`.
    #[arg(long)]
    results: Option<PathBuf>,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    model_checkpoint: PathBuf,
    /// JSONL dataset the model was trained on.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    delta: f64,
    /// Run seed; determines the split and the attack's member sample.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    history: Option<usize>,
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    #[arg(long)]
    imbalance_ratio: Option<f64>,
    #[arg(long, default_value_t = 0.9999)]
    beta: f64,
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.5)]
    calibration_fraction: f64,
}

#[derive(Args)]
struct AccountantArgs {
    #[arg(long)]
    q: f64,
    #[arg(long)]
    sigma: f64,
    #[arg(long)]
    steps: u64,
    #[arg(long)]
    delta: f64,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    q: f64,
    #[arg(long)]
    steps: u64,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// Restrict `a` to one config hash.
    #[arg(long)]
    a_hash: Option<String>,
    #[arg(long)]
    b_hash: Option<String>,
    #[arg(long, default_value = "macro_f1")]
    metric: String,
}

#[derive(Args)]
struct ReportArgs {
    /// Defaults to `<out-dir>/results.csv`.
    #[arg(long)]
    results: Option<PathBuf>,
}

/// Sets `key` (dotted path) in `target` to `value`, parsed as JSON when it
/// parses and as a string otherwise.
fn apply_set(target: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .with_context(|| format!("--set expects KEY=VALUE, got {assignment:?}"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = target;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .with_context(|| format!("--set {key}: {} is not an object", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("split yields at least one part")
}

fn with_sets<T: serde::Serialize + serde::de::DeserializeOwned>(
    base: T,
    sets: &[String],
) -> Result<T> {
    if sets.is_empty() {
        return Ok(base);
    }
    let mut v = serde_json::to_value(base)?;
    for s in sets {
        apply_set(&mut v, s)?;
    }
    serde_json::from_value(v).context("config invalid after --set overrides")
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn build_config(a: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut c = match &a.config {
        Some(p) => read_json(p)?,
        None => match a.task {
            TaskArg::PostLevel => ExperimentConfig::synthetic_post_level(a.users),
            TaskArg::UserLevel => ExperimentConfig::synthetic_user_level(a.users),
        },
    };
    if let Some(p) = &a.data {
        c.data = DataSource::Jsonl { path: p.clone() };
    }
    if let Some(s) = a.seed {
        c.seeds = vec![s];
    }
    if let Some(s) = &a.seeds {
        c.seeds = s.clone();
    }
    if let Some(v) = a.epochs {
        c.epochs = v;
    }
    if let Some(v) = a.q {
        c.q = v;
    }
    if let Some(v) = a.delta {
        c.delta = v;
    }
    if let Some(v) = a.learning_rate {
        c.adam.learning_rate = v;
    }
    if let Some(v) = a.beta1 {
        c.adam.beta1 = v;
    }
    if let Some(v) = a.beta2 {
        c.adam.beta2 = v;
    }
    if let Some(v) = a.hidden {
        c.hidden = v;
    }
    if let Some(l) = a.history {
        c.truncation = Some(Truncation::Posts(l));
    }
    if let Some(d) = a.history_days {
        c.truncation = Some(Truncation::Days(d));
    }
    if let Some(r) = a.imbalance_ratio {
        c.imbalance_ratio = Some(r);
    }
    let clip = a.clip_bound.unwrap_or(match c.privacy {
        PrivacySetting::NonPrivate => DEFAULT_CLIP_BOUND,
        other => other.clip_bound(),
    });
    c.privacy = match (a.sigma, a.epsilon, a.non_private) {
        (Some(sigma), _, _) => PrivacySetting::Sigma {
            sigma,
            clip_bound: clip,
        },
        (_, Some(epsilon), _) if epsilon.is_infinite() => PrivacySetting::NonPrivate,
        (_, Some(epsilon), _) => PrivacySetting::TargetEpsilon {
            epsilon,
            clip_bound: clip,
        },
        (_, _, true) => PrivacySetting::NonPrivate,
        _ => match c.privacy {
            PrivacySetting::Sigma { sigma, .. } => PrivacySetting::Sigma {
                sigma,
                clip_bound: clip,
            },
            PrivacySetting::TargetEpsilon { epsilon, .. } => PrivacySetting::TargetEpsilon {
                epsilon,
                clip_bound: clip,
            },
            PrivacySetting::NonPrivate => PrivacySetting::NonPrivate,
        },
    };
    let c = with_sets(c, &a.set)?;
    c.validate()?;
    Ok(c)
}

/// A number, or its string token when not finite (JSON has no infinities).
fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or_else(|| Value::String(format!("{x}")), Value::Number)
}

/// A results row as a JSON object keyed by the CSV columns.
fn row_json(r: &RunResult) -> Value {
    let obj: Map<String, Value> = header()
        .into_iter()
        .zip(r.to_record())
        .map(|(k, v)| {
            let value = if matches!(
                k,
                "config_hash" | "history_len" | "privacy" | "epsilon_trace"
            ) {
                Value::String(v)
            } else if let Ok(n) = v.parse::<u64>() {
                n.into()
            } else if let Ok(b) = v.parse::<bool>() {
                b.into()
            } else {
                v.parse::<f64>().map_or(Value::String(v), num)
            };
            (k.to_string(), value)
        })
        .collect();
    Value::Object(obj)
}

fn print(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

fn generate(out_dir: &Path, a: GenerateArgs) -> Result<()> {
    let base = match &a.config {
        Some(p) => read_json(p)?,
        None => match a.task {
            TaskArg::PostLevel => SyntheticConfig::post_level(a.users, a.seed),
            TaskArg::UserLevel => SyntheticConfig::user_level(a.users, a.seed),
        },
    };
    let cfg: SyntheticConfig = with_sets(base, &a.set)?;
    let ds = generate_synthetic(&cfg)?;
    let path = a.output.unwrap_or_else(|| out_dir.join("data.jsonl"));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    export_jsonl(&ds, &path)?;
    print(&json!({
        "path": path,
        "samples": ds.len(),
        "class_counts": ds.class_counts(),
        "max_history": ds.max_history(),
    }));
    Ok(())
}

fn train(out_dir: &Path, a: TrainArgs) -> Result<()> {
    let cfg = build_config(&a.config)?;
    std::fs::create_dir_all(out_dir)?;
    let mut appender = ResultsAppender::open(&out_dir.join("results.csv"))?;
    for &seed in &cfg.seeds {
        let outcome = run_and_save(&cfg, seed, Some(out_dir))?;
        appender.append(&outcome.result)?;
        print(&row_json(&outcome.result));
    }
    Ok(())
}

fn run_sweep(out_dir: &Path, a: SweepArgs) -> Result<()> {
    let base = build_config(&a.config)?;
    let clip = a.config.clip_bound.unwrap_or(DEFAULT_CLIP_BOUND);
    let grid = match &a.grid {
        Some(p) => read_json(p)?,
        None => SweepGrid {
            history_lengths: a.history_lengths.clone(),
            privacy: a
                .epsilons
                .iter()
                .map(|&e| {
                    if e.is_infinite() {
                        PrivacySetting::NonPrivate
                    } else {
                        PrivacySetting::TargetEpsilon {
                            epsilon: e,
                            clip_bound: clip,
                        }
                    }
                })
                .collect(),
            imbalance_ratios: a.imbalance_ratios.clone(),
            repetitions: a.repetitions,
        },
    };
    std::fs::create_dir_all(out_dir)?;
    let results = a.results.unwrap_or_else(|| out_dir.join("results.csv"));
    let rows = sweep(&grid, &base, &results, Some(out_dir))?;
    let files = report(&rows, out_dir)?;
    let failed: Vec<Value> = rows
        .iter()
        .filter(|r| !r.is_ok())
        .map(|r| json!({"config_hash": r.config_hash, "seed": r.seed, "status": r.status}))
        .collect();
    print(&json!({
        "rows": rows.len(),
        "failed": failed,
        "results": results,
        "by_history_privacy": files.by_history_privacy,
        "by_imbalance": files.by_imbalance,
    }));
    Ok(())
}

fn attack(a: AttackArgs) -> Result<()> {
    let model = HistLstm::load(&a.model_checkpoint)
        .with_context(|| format!("loading checkpoint {}", a.model_checkpoint.display()))?;
    let mc = *model.config();
    let mut cfg = ExperimentConfig::synthetic_post_level(10);
    cfg.data = DataSource::Jsonl {
        path: a.dataset.clone(),
    };
    cfg.task = mc.task;
    cfg.encoder = mc.encoder;
    cfg.hidden = mc.hidden;
    cfg.split = a.split.map(Into::into);
    cfg.truncation = a.history.map(Truncation::Posts);
    cfg.imbalance_ratio = a.imbalance_ratio;
    cfg.loss.beta = a.beta;
    cfg.loss.gamma = a.gamma;
    cfg.selection = CheckpointSelection::Last;
    let prep = prepare(&cfg, a.seed)?;
    if prep.dataset.num_classes != mc.classes {
        bail!(
            "dataset has {} classes but the checkpoint predicts {}",
            prep.dataset.num_classes,
            mc.classes
        );
    }
    let loss = training_loss(&cfg, &prep)?;
    let result = membership_attack(&model, &prep, &loss, a.calibration_fraction, a.seed)?;
    let check = dp_bound_check(&result, a.epsilon, a.delta);
    print(&json!({
        "threshold": num(result.threshold),
        "tpr": num(result.rates.tpr),
        "fpr": num(result.rates.fpr),
        "pl": num(result.pl),
        "eval_members": result.eval_members,
        "eval_non_members": result.eval_non_members,
        "epsilon": num(a.epsilon),
        "delta": a.delta,
        "bound_check": {
            "pass": check.pass,
            "margin": num(check.margin),
            "tpr_low": num(check.tpr_low),
            "fpr_high": num(check.fpr_high),
        },
    }));
    Ok(())
}

fn accountant(a: AccountantArgs) -> Result<()> {
    if a.sigma == 0.0 {
        print(&json!({"epsilon": num(f64::INFINITY), "order": Value::Null}));
        return Ok(());
    }
    let (eps, order) = epsilon_for(a.q, a.sigma, a.steps, a.delta)?;
    print(&json!({"epsilon": num(eps), "order": order}));
    Ok(())
}

fn calibrate(a: CalibrateArgs) -> Result<()> {
    let sigma = calibrate_sigma(a.epsilon, a.delta, a.q, a.steps)?;
    let (eps, order) = epsilon_for(a.q, sigma, a.steps, a.delta)?;
    print(&json!({"sigma": sigma, "epsilon": num(eps), "order": order}));
    Ok(())
}

fn load_rows(path: &Path, hash: Option<&str>) -> Result<Vec<RunResult>> {
    let rows = read_results(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(match hash {
        Some(h) => rows.into_iter().filter(|r| r.config_hash == h).collect(),
        None => rows,
    })
}

fn run_compare(a: CompareArgs) -> Result<()> {
    let ra = load_rows(&a.a, a.a_hash.as_deref())?;
    let rb = load_rows(&a.b, a.b_hash.as_deref())?;
    let c = compare(&ra, &rb, &a.metric)?;
    print(&json!({
        "metric": c.metric,
        "n_pairs": c.n_pairs,
        "p_value": num(c.p_value),
        "median_difference": num(c.median_difference),
        "direction": c.direction,
    }));
    Ok(())
}

fn run_report(out_dir: &Path, a: ReportArgs) -> Result<()> {
    let path = a.results.unwrap_or_else(|| out_dir.join("results.csv"));
    let rows = read_results(&path).with_context(|| format!("reading {}", path.display()))?;
    let files = report(&rows, out_dir)?;
    print(&json!({
        "rows": rows.len(),
        "results": files.results,
        "by_history_privacy": files.by_history_privacy,
        "by_imbalance": files.by_imbalance,
    }));
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let out = cli.out_dir;
    match cli.command {
        Command::GenerateData(a) => generate(&out, a),
        Command::Train(a) => train(&out, a),
        Command::Sweep(a) => run_sweep(&out, a),
        Command::Attack(a) => attack(a),
        Command::Accountant(a) => accountant(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Compare(a) => run_compare(a),
        Command::Report(a) => run_report(&out, a),
    }
}
