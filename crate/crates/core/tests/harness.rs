use std::fs;

use histdp_core::accountant::epsilon_for;
use histdp_core::data::{
    export_jsonl, generate_synthetic, ingest_jsonl, HistoryLengths, SyntheticConfig,
};
use histdp_core::dp_optimizer::steps_per_epoch;
use histdp_core::harness::*;
use histdp_core::{Error, TaskKind};

fn tiny(num_users: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::synthetic_post_level(num_users);
    if let DataSource::Synthetic { config } = &mut c.data {
        config.history = HistoryLengths::Fixed { len: 8 };
    }
    c.hidden = 4;
    c.epochs = 2;
    c.seeds = vec![0, 1];
    c
}

fn private(mut c: ExperimentConfig, epsilon: f64) -> ExperimentConfig {
    c.privacy = PrivacySetting::TargetEpsilon {
        epsilon,
        clip_bound: DEFAULT_CLIP_BOUND,
    };
    c
}

#[test]
fn jsonl_round_trip_preserves_the_dataset() {
    let dir = tempfile::tempdir().unwrap();
    for cfg in [
        SyntheticConfig::post_level(60, 1),
        SyntheticConfig::user_level(60, 2),
    ] {
        let ds = generate_synthetic(&cfg).unwrap();
        let path = dir.path().join("d.jsonl");
        export_jsonl(&ds, &path).unwrap();
        assert_eq!(ingest_jsonl(&path, cfg.task).unwrap(), ds);
    }
}

#[test]
fn runs_are_deterministic() {
    let c = private(tiny(300), 2.6);
    let a = run(&c, 3).unwrap();
    let b = run(&c, 3).unwrap();
    assert!(a.result.same_outcome(&b.result));
    assert_eq!(a.model.params(), b.model.params());
    let other = run(&c, 4).unwrap();
    assert!(!a.result.same_outcome(&other.result));
}

#[test]
fn non_private_run_reports_infinite_epsilon() {
    let r = run(&tiny(300), 0).unwrap().result;
    assert!(r.epsilon.is_infinite());
    assert_eq!(r.sigma, 0.0);
    assert!(r.clip.is_infinite());
    assert!(r.epsilon_trace.iter().all(|e| e.is_infinite()));
    assert!(r.bound_pass);
}

#[test]
fn epsilon_trace_matches_the_accountant() {
    let mut c = private(tiny(300), 2.6);
    c.epochs = 3;
    let r = run(&c, 0).unwrap().result;
    let per_epoch = steps_per_epoch(c.q);
    assert_eq!(r.steps, 3 * per_epoch);
    assert_eq!(r.epsilon_trace.len(), 3);
    for (k, &e) in r.epsilon_trace.iter().enumerate() {
        let (want, _) = epsilon_for(c.q, r.sigma, (k as u64 + 1) * per_epoch, c.delta).unwrap();
        assert_eq!(e, want);
    }
    assert!(r.epsilon <= 2.6 && r.epsilon > 2.5);
    assert_eq!(r.epsilon, *r.epsilon_trace.last().unwrap());
}

#[test]
fn no_signal_gives_chance_macro_f1() {
    // With labels independent of the posts, the expected macro F1 of any
    // classifier is fixed by its positive-prediction rate.
    let mut c = tiny(2000);
    c.epochs = 3;
    if let DataSource::Synthetic { config } = &mut c.data {
        config.signal_strength = 0.0;
    }
    c.attack.enabled = false;
    for seed in 0..3 {
        let out = run(&c, seed).unwrap();
        let prep = prepare(&c, seed).unwrap();
        let test = prep.subset(&prep.split.test);
        let pi = test.iter().filter(|s| s.label == 1).count() as f64 / test.len() as f64;
        let p = test
            .iter()
            .filter(|s| out.model.predict(s).unwrap() == 1)
            .count() as f64
            / test.len() as f64;
        let f1 = |a: f64, b: f64| {
            if a + b == 0.0 {
                0.0
            } else {
                2.0 * a * b / (a + b)
            }
        };
        let chance = 0.5 * (f1(pi, p) + f1(1.0 - pi, 1.0 - p));
        assert!(
            (out.result.macro_f1 - chance).abs() <= 0.05,
            "seed {seed}: macro F1 {} vs chance {chance}",
            out.result.macro_f1
        );
    }
}

#[test]
fn user_level_run_reports_graded_metrics() {
    let mut c = ExperimentConfig::synthetic_user_level(400);
    c.hidden = 4;
    c.epochs = 2;
    let r = run(&private(c, 2.6), 0).unwrap().result;
    assert_eq!(r.task, TaskKind::UserLevel);
    for v in [r.graded_p, r.graded_r, r.graded_f, r.macro_f1] {
        assert!((0.0..=1.0).contains(&v));
    }
}

#[test]
fn run_errors_carry_hash_and_seed() {
    let mut c = private(tiny(300), 2.6);
    c.delta = 0.1;
    match run(&c, 7) {
        Err(Error::Run {
            config_hash, seed, ..
        }) => {
            assert_eq!(config_hash, c.config_hash());
            assert_eq!(seed, 7);
        }
        other => panic!("expected a run error, got {:?}", other.map(|o| o.result)),
    }
}

#[test]
fn single_cell_sweep_equals_single_run() {
    let dir = tempfile::tempdir().unwrap();
    let base = tiny(300);
    let grid = SweepGrid {
        history_lengths: vec![4],
        privacy: vec![PrivacySetting::NonPrivate],
        imbalance_ratios: vec![],
        repetitions: 1,
    };
    let rows = sweep(&grid, &base, &dir.path().join("r.csv"), None).unwrap();
    assert_eq!(rows.len(), 1);
    let cfg = &grid.expand(&base).unwrap()[0];
    assert!(rows[0].same_outcome(&run(cfg, 0).unwrap().result));
}

#[test]
fn sweep_writes_one_row_per_cell_and_seed_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    let mut base = tiny(200);
    base.epochs = 1;
    let grid = SweepGrid {
        history_lengths: vec![0, 4],
        privacy: vec![
            PrivacySetting::NonPrivate,
            PrivacySetting::TargetEpsilon {
                epsilon: 2.6,
                clip_bound: DEFAULT_CLIP_BOUND,
            },
        ],
        imbalance_ratios: vec![],
        repetitions: 10,
    };
    let rows = sweep(&grid, &base, &path, Some(dir.path())).unwrap();
    assert_eq!(rows.len(), 40);
    assert!(rows.iter().all(|r| r.is_ok()));
    assert_eq!(read_results(&path).unwrap().len(), 40);

    // Simulate a crash: keep the header and 25 rows, plus half of the next.
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let mut cut = lines[..26].join("\n");
    cut.push('\n');
    cut.push_str(&lines[26][..lines[26].len() / 2]);
    fs::write(&path, cut).unwrap();
    assert_eq!(read_results(&path).unwrap().len(), 25);

    let resumed = sweep(&grid, &base, &path, Some(dir.path())).unwrap();
    assert_eq!(resumed.len(), 40);
    for (a, b) in rows.iter().zip(&resumed) {
        assert!(a.same_outcome(b), "{} seed {}", a.config_hash, a.seed);
    }

    // Every row replays from its stored config.
    let r = &rows[13];
    assert!(replay(dir.path(), &r.config_hash, r.seed)
        .unwrap()
        .same_outcome(r));
}

#[test]
fn failed_runs_are_recorded_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let mut bad = private(tiny(300), 2.6);
    bad.delta = 0.5;
    let good = tiny(300);
    let rows = run_configs(&[bad, good], &dir.path().join("r.csv"), None).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows[..2].iter().all(|r| r.status.starts_with("failed")));
    assert!(rows[2..].iter().all(|r| r.is_ok()));
}

#[test]
fn comparing_identical_runs_is_degenerate() {
    let c = tiny(300);
    let rows: Vec<RunResult> = (0..6).map(|s| run(&c, s).unwrap().result).collect();
    assert!(matches!(
        compare(&rows, &rows, "macro_f1"),
        Err(Error::DegeneratePairs)
    ));
    assert!(compare(&rows, &rows[..3], "macro_f1").is_err());
}

#[test]
fn report_aggregates_by_hand() {
    let dir = tempfile::tempdir().unwrap();
    let template = run(&tiny(300), 0).unwrap().result;
    let mut rows = Vec::new();
    for (privacy, values) in [("inf", [0.1, 0.2, 0.3]), ("eps=0.6", [0.5, 0.5, 0.5])] {
        for (seed, v) in values.iter().enumerate() {
            let mut r = template.clone();
            r.privacy = privacy.into();
            r.config_hash = format!("h-{privacy}");
            r.seed = seed as u64;
            r.macro_f1 = *v;
            rows.push(r);
        }
    }
    let files = report(&rows, dir.path()).unwrap();
    assert_eq!(read_results(&files.results).unwrap().len(), 6);
    let agg = aggregate(&rows).unwrap();
    let get = |privacy: &str| {
        agg.iter()
            .find(|a| a.privacy == privacy && a.metric == "macro_f1")
            .unwrap()
            .clone()
    };
    let a = get("inf");
    assert_eq!(a.n, 3);
    assert!((a.mean - 0.2).abs() < 1e-12);
    assert!((a.std - 0.1).abs() < 1e-12);
    // t(0.975, 2) = 4.302652729911275
    let half = 4.302652729911275 * 0.1 / 3f64.sqrt();
    assert!((a.ci_low - (0.2 - half)).abs() < 1e-9);
    assert!((a.ci_high - (0.2 + half)).abs() < 1e-9);
    let b = get("eps=0.6");
    assert_eq!((b.ci_low, b.mean, b.ci_high), (0.5, 0.5, 0.5));

    let single = report(&rows[..1], &dir.path().join("one")).unwrap();
    let text = fs::read_to_string(single.by_history_privacy).unwrap();
    assert!(text.lines().count() > 1);
}

#[test]
fn results_rows_round_trip_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(&private(tiny(300), 0.6), 2).unwrap().result;
    let path = dir.path().join("r.csv");
    write_results(&path, std::slice::from_ref(&r)).unwrap();
    let back = read_results(&path).unwrap();
    assert!(back[0].same_outcome(&r));
    assert_eq!(back[0].epsilon.to_bits(), r.epsilon.to_bits());
}
