use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn calibkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_calibkit")).args(args).output().expect("spawn calibkit")
}

fn ok(args: &[&str]) -> String {
    let out = calibkit(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json_field(path: &Path, key: &str) -> f64 {
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v[key].as_f64().unwrap()
}

#[test]
fn perfect_preset_is_calibrated() {
    let dir = TempDir::new().unwrap();
    let log = dir.path().join("perfect.jsonl");
    let report = dir.path().join("report.json");
    ok(&["synth", "--preset", "perfect", "--n", "100000", "--seed", "7", "--out", p(&log)]);
    let stdout = ok(&["metrics", p(&log), "--out", p(&report)]);
    assert!(stdout.contains("n=100000 bins=12"), "{stdout}");
    let ece1 = json_field(&report, "ece1");
    assert!(ece1 < 0.01, "ece1 = {ece1}");
}

#[test]
fn empty_log_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let log = dir.path().join("empty.jsonl");
    std::fs::write(&log, "").unwrap();
    let out = calibkit(&["metrics", p(&log)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty input"));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    // usage error names the flag
    let out = calibkit(&["metrics", "x.jsonl", "--binz", "3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--binz"));
    let out = calibkit(&["synth", "--preset", "nope", "--out", p(&dir.path().join("a"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
    // bad record: line and field path
    let log = dir.path().join("bad.jsonl");
    std::fs::write(
        &log,
        r#"{"schema_version":1,"episode_id":"e","task_id":"t","outcome":1,"variants":[{"variant_id":0,"instruction_text":"","steps":[{"t":1,"dims":[{"top_prob":1.5}]}]}]}"#,
    )
    .unwrap();
    let out = calibkit(&["metrics", p(&log)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 1") && err.contains("top_prob"), "{err}");
    // missing file is an environment failure
    let out = calibkit(&["metrics", p(&dir.path().join("missing.jsonl"))]);
    assert_eq!(out.status.code(), Some(1));
    // too many bins
    let small = dir.path().join("small.jsonl");
    ok(&["synth", "--preset", "perfect", "--n", "5", "--out", p(&small)]);
    assert_eq!(calibkit(&["metrics", p(&small), "--bins", "12"]).status.code(), Some(2));
}

#[test]
fn actionwise_platt_beats_global_on_hetero7() {
    let dir = TempDir::new().unwrap();
    let log = dir.path().join("hetero7.jsonl");
    let out = dir.path().join("recal");
    ok(&["synth", "--preset", "hetero7", "--seed", "1", "--out", p(&log)]);
    ok(&["recalibrate", p(&log), "--method", "aw-platt", "--splits", "20", "--seed", "3", "--out", p(&out)]);
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let ece1 = |method: &str| -> f64 {
        let line = summary.lines().find(|l| l.starts_with(&format!("{method},"))).unwrap();
        line.split(',').nth(2).unwrap().parse().unwrap()
    };
    assert!(summary.starts_with("method,splits,mean_ece1"), "{summary}");
    assert!(ece1("aw-platt") < ece1("platt"), "{summary}");
    assert!(ece1("platt") < ece1("uncalibrated"), "{summary}");
    let record = std::fs::read_to_string(out.join("recalibrator.txt")).unwrap();
    assert!(record.contains("kind actionwise_platt") && record.contains("param 6 "), "{record}");
}

#[test]
fn outputs_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let run = |tag: &str| -> Vec<Vec<u8>> {
        let d = dir.path().join(tag);
        std::fs::create_dir(&d).unwrap();
        let log = d.join("log.jsonl");
        let truth = d.join("truth.jsonl");
        ok(&["synth", "--preset", "discriminative", "--n", "300", "--seed", "5", "--out", p(&log), "--truth", p(&truth)]);
        let mut variants = d.join("variants.jsonl");
        let cfg = d.join("cfg.json");
        std::fs::write(
            &cfg,
            r#"{"n_episodes":200,"dims":3,"vocab_size":8,"t_range":[1,3],"link":{"kind":"identity"},"latent_range":[0.2,0.9],
               "dim_jitter_sd":[0.05],"prompt_noise_sd":0.1,"n_variants":6,"temporal_profile":"flat","prior_confidence":0.9,
               "step_noise_sd":0.0,"proximity_rate":0.0,"emit_logits":true,"logit_temperature":1.0,"seed":2}"#,
        )
        .unwrap();
        ok(&["synth", "--config", p(&cfg), "--out", p(&variants)]);
        ok(&["ensemble-ablation", p(&variants), "--k-list", "1,3,6", "--trials", "50", "--seed", "4", "--out", p(&d.join("abl.csv"))]);
        ok(&["recalibrate", p(&variants), "--method", "temperature", "--splits", "5", "--out", p(&d.join("recal"))]);
        ok(&["temporal", p(&log), "--agg", "window", "--out", p(&d.join("temporal"))]);
        ok(&["monitor", p(&log), "--loo", "--out", p(&d.join("monitor"))]);
        ok(&["audit", p(&log), "--out", p(&d.join("audit.csv"))]);
        ok(&["compare", p(&log), "--by-task", "--out", p(&d.join("compare.csv"))]);
        variants = d.join("metrics.csv");
        ok(&["metrics", p(&log), "--agg", "mean", "--format", "csv", "--out", p(&variants)]);
        [
            "log.jsonl",
            "truth.jsonl",
            "variants.jsonl",
            "abl.csv",
            "recal/recalibrator.txt",
            "recal/summary.csv",
            "temporal/curve.csv",
            "temporal/reliability_0.csv",
            "temporal/reliability_99.csv",
            "monitor/thresholds.csv",
            "monitor/decisions.csv",
            "audit.csv",
            "compare.csv",
            "metrics.csv",
        ]
        .iter()
        .map(|f| std::fs::read(d.join(f)).unwrap_or_else(|e| panic!("{f}: {e}")))
        .collect()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn monitor_profile_round_trip() {
    let dir = TempDir::new().unwrap();
    let log = dir.path().join("log.jsonl");
    let fit = dir.path().join("fit");
    let again = dir.path().join("again");
    ok(&["synth", "--preset", "discriminative", "--n", "200", "--out", p(&log)]);
    ok(&["monitor", p(&log), "--quantile", "0.2", "--out", p(&fit)]);
    let thresholds = fit.join("thresholds.csv");
    ok(&["monitor", p(&log), "--profile", p(&thresholds), "--out", p(&again)]);
    assert_eq!(std::fs::read(fit.join("decisions.csv")).unwrap(), std::fs::read(again.join("decisions.csv")).unwrap());
    assert_eq!(std::fs::read(&thresholds).unwrap(), std::fs::read(again.join("thresholds.csv")).unwrap());
}

#[test]
fn compare_multiple_logs() {
    let dir = TempDir::new().unwrap();
    let good = dir.path().join("good.jsonl");
    let over = dir.path().join("over.jsonl");
    ok(&["synth", "--preset", "perfect", "--n", "400", "--out", p(&good)]);
    ok(&["synth", "--preset", "overconfident", "--n", "400", "--out", p(&over)]);
    let stdout = ok(&["compare", p(&good), p(&over)]);
    assert!(stdout.contains("good") && stdout.contains("over"), "{stdout}");
}

#[test]
fn lenient_mode_skips_bad_lines() {
    let dir = TempDir::new().unwrap();
    let log = dir.path().join("log.jsonl");
    ok(&["synth", "--preset", "perfect", "--n", "50", "--out", p(&log)]);
    let mut text = std::fs::read_to_string(&log).unwrap();
    text.push_str("{not json}\n");
    std::fs::write(&log, text).unwrap();
    assert_eq!(calibkit(&["metrics", p(&log)]).status.code(), Some(2));
    let out = calibkit(&["--lenient", "metrics", p(&log)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 51"));
    assert!(String::from_utf8_lossy(&out.stdout).contains("n=50 "));
}

#[test]
fn thread_count_env() {
    let dir = TempDir::new().unwrap();
    let log = dir.path().join("log.jsonl");
    ok(&["synth", "--preset", "perfect", "--n", "50", "--out", p(&log)]);
    let with = |v: &str| Command::new(env!("CARGO_BIN_EXE_calibkit")).env("CALIBKIT_THREADS", v).args(["metrics", p(&log)]).output().unwrap();
    assert!(with("1").status.success());
    assert!(with("0").status.success());
    assert_eq!(with("many").status.code(), Some(2));
}
