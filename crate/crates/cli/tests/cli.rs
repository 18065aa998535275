use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use stepspec::schema;

fn demo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/demo.json")
}

fn stepspec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stepspec"))
        .args(args)
        .output()
        .unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_covers_every_problem_and_policy() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = stepspec(&["run", "--config", s(&demo()), "--out", s(&out), "--virtual-clock"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["episodes"].as_array().unwrap().len(), 30);
    assert_eq!(summary["clock"], "virtual");
    let fpsr = &summary["totals"]["fpsr"];
    assert!(fpsr["speedup"].as_f64().unwrap() > 1.0);
    assert_eq!(std::fs::read_dir(out.join("episodes")).unwrap().count(), 30);
    assert_eq!(schema::check_dir(&out).unwrap(), 31);
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("policy"));
}

#[test]
fn existing_output_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    std::fs::write(dir.path().join("simulate.json"), "stale").unwrap();
    let o = stepspec(&["simulate", "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--force"));
    assert_eq!(
        std::fs::read_to_string(dir.path().join("simulate.json")).unwrap(),
        "stale"
    );
    assert!(stepspec(&["simulate", "--out", out, "--force"]).status.success());
    assert_eq!(json(&dir.path().join("simulate.json"))["makespans"]["fpsr"], 10);
}

#[test]
fn missing_endpoint_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"target": {"kind": "http", "model_name": "m"}, "problems": ["p"], "policies": ["baseline"]}"#,
    )
    .unwrap();
    let o = stepspec(&["run", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("endpoint"));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn failing_backend_exits_two_and_keeps_the_partial_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"target": {"kind": "simulated", "seed": 1, "step_latency": {"constant": 5}, "quality": 1.0, "failure_rate": 1.0},
            "problems": ["p"], "policies": ["baseline"]}"#,
    )
    .unwrap();
    let out = dir.path().join("o");
    let o = stepspec(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let partial = out.join("episodes/000_baseline.jsonl");
    assert!(!std::fs::read_to_string(&partial).unwrap().is_empty());
    schema::check_file(&partial).unwrap();
}

#[test]
fn simulate_defaults_to_the_two_round_example() {
    let dir = tempfile::tempdir().unwrap();
    let o = stepspec(&["simulate", "--out", s(dir.path()), "--force"]);
    assert!(o.status.success());
    let report = json(&dir.path().join("simulate.json"));
    assert_eq!(report["makespans"]["baseline"], 22);
    assert_eq!(report["makespans"]["fpsr"], 10);
    assert_eq!(report["speedups"]["fpsr"], 2.2);
    let gantt = std::fs::read_to_string(dir.path().join("gantt.txt")).unwrap();
    assert!(gantt.starts_with("draft  |P00001111.|"), "{gantt}");
    assert!(std::fs::read_to_string(dir.path().join("gantt.svg"))
        .unwrap()
        .starts_with("<svg"));
    assert_eq!(schema::check_dir(dir.path()).unwrap(), 5);
}

#[test]
fn sweep_rows_fall_with_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let o = stepspec(&[
        "sweep-alpha",
        "--config",
        s(&demo()),
        "--out",
        s(dir.path()),
        "--force",
        "--seed",
        "3",
    ]);
    assert!(o.status.success());
    let report = json(&dir.path().join("sweep.json"));
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    for pair in rows.windows(2) {
        assert!(pair[1]["acceptance"].as_f64() <= pair[0]["acceptance"].as_f64());
        assert!(pair[1]["speedup"].as_f64() <= pair[0]["speedup"].as_f64());
    }
    assert_eq!(report["sampler"]["seed"], 3);
}

#[test]
fn train_toy_reports_every_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let o = stepspec(&["train-toy", "--out", s(dir.path()), "--force"]);
    assert!(o.status.success());
    let report = json(&dir.path().join("train_report.json"));
    assert_eq!(report["epochs"], 200);
    assert_eq!(report["mean_reward"].as_array().unwrap().len(), 200);
    assert!(report["final"]["expected_reward"].as_f64() > report["initial"]["expected_reward"].as_f64());
    schema::check_dir(dir.path()).unwrap();
}

#[test]
fn trace_export_renders_an_episode() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert!(
        stepspec(&["run", "--config", s(&demo()), "--out", s(&run), "--episodes", "1"])
            .status
            .success()
    );
    let out = dir.path().join("gantt");
    let o = stepspec(&[
        "trace-export",
        "--trace",
        s(&run.join("episodes/000_fpsr.jsonl")),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let intervals = json(&out.join("intervals.json"));
    assert!(intervals.as_array().unwrap().iter().any(|i| i["op"] == "verify"));
    assert_eq!(schema::check_dir(&out).unwrap(), 1);

    let missing = stepspec(&[
        "trace-export",
        "--trace",
        s(&dir.path().join("nope.jsonl")),
        "--out",
        s(&out),
        "--force",
    ]);
    assert_eq!(missing.status.code(), Some(1));
}
