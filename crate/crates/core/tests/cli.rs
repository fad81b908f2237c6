use std::path::Path;
use std::process::{Command, Output};

use metric_screen::io::read_dataset;
use metric_screen::simgen::{generate, ModelSpec};
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_metric-screen"));
    c.env_remove("METRIC_SCREEN_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_shape_sidecar_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let o = run(&[
            "simulate",
            "--model",
            "xor",
            "--p",
            "100",
            "--n",
            "1000",
            "--seed",
            "7",
            "--output",
            path_str(out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1001);
    assert!(lines.iter().all(|l| l.split(',').count() == 101));
    assert!(lines[0].starts_with("x1,x2,") && lines[0].ends_with(",x100,y"));
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());

    // round trip into the same in-memory dataset
    let parsed = read_dataset(text.as_bytes(), "y").unwrap();
    assert_eq!(
        parsed.data,
        generate(&ModelSpec::xor(100), 1000, 7).unwrap()
    );
}

#[test]
fn qda_sidecar_echoes_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("q.csv");
    let o = run(&["simulate", "--model", "qda", "--output", path_str(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let side: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("q.csv.json")).unwrap())
            .unwrap();
    assert_eq!(side["schema"], 1);
    assert_eq!(side["model"]["model"], "qda");
    assert_eq!(side["model"]["delta1"], 0.25);
    assert_eq!(side["model"]["delta2"], 0.2);
    assert_eq!(side["model"]["xi"], 0.1);
}

#[test]
fn screen_xor_and_replay_embedded_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("xor.csv");
    let o = run(&[
        "simulate",
        "--model",
        "xor",
        "--p",
        "10",
        "--n",
        "1000",
        "--seed",
        "3",
        "--output",
        path_str(&data),
    ]);
    assert!(o.status.success());
    let first = dir.path().join("first.json");
    let o = run(&[
        "screen",
        "--mode",
        "low",
        "--input",
        path_str(&data),
        "--label",
        "y",
        "--gamma",
        "permutation:200:0.95",
        "--seed",
        "11",
        "--output",
        path_str(&first),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out: Value = serde_json::from_str(&std::fs::read_to_string(&first).unwrap()).unwrap();
    assert_eq!(out["schema"], 1);
    assert_eq!(out["selected"], serde_json::json!([0, 1]));
    assert_eq!(out["selected_names"], serde_json::json!(["x1", "x2"]));
    assert_eq!(out["seed"], 11);
    assert_eq!(out["config"]["screen"]["gamma"]["kind"], "permutation");
    assert_eq!(out["rescale_divisors"].as_array().unwrap().len(), 10);

    // re-running the embedded config reproduces the output exactly
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, serde_json::to_string(&out["config"]).unwrap()).unwrap();
    let second = dir.path().join("second.json");
    let o = run(&[
        "screen",
        "--input",
        path_str(&data),
        "--config",
        path_str(&cfg),
        "--output",
        path_str(&second),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(&first).unwrap(),
        std::fs::read(&second).unwrap()
    );
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let constant = dir.path().join("c.csv");
    std::fs::write(&constant, "a,b,y\n1,2,0\n1,2,1\n1,2,0\n1,2,1\n").unwrap();
    let o = run(&["screen", "--input", path_str(&constant)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("degenerate feature column"),
        "{}",
        stderr(&o)
    );

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "a,y\n0.5,0\n0.7,1\nx,0\n").unwrap();
    let o = run(&["screen", "--input", path_str(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));

    let labels = dir.path().join("labels.csv");
    std::fs::write(&labels, "a,y\n0.5,0\n0.7,3\n").unwrap();
    let o = run(&["screen", "--input", path_str(&labels)]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(&[
        "screen",
        "--input",
        path_str(&dir.path().join("missing.csv")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_one() {
    let o = run(&["screen", "--input", "x.csv", "--gamma", "permutation:5"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["no-such-command"]);
    assert_eq!(o.status.code(), Some(1));
    let o = bin()
        .args(["oracle-check"])
        .env("METRIC_SCREEN_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(run(&["--help"]).status.success());
}

#[test]
fn threads_env_overrides_flag() {
    let o = bin()
        .args(["--threads", "0", "oracle-check"])
        .env("METRIC_SCREEN_THREADS", "2")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn malformed_plan_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.json");
    std::fs::write(&plan, r#"{"model": {"model": "xor", "p": 2}, "n": 100, "reps": 2, "select_k": 2, "nosie_dims": [4]}"#).unwrap();
    let o = run(&[
        "replicate",
        "--plan",
        path_str(&plan),
        "--out-dir",
        path_str(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nosie_dims"), "{}", stderr(&o));

    std::fs::write(
        &plan,
        r#"{"model": {"model": "xor", "p": 2}, "n": 100, "reps": 0, "select_k": 2}"#,
    )
    .unwrap();
    let o = run(&[
        "replicate",
        "--plan",
        path_str(&plan),
        "--out-dir",
        path_str(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("reps"), "{}", stderr(&o));
}

#[test]
fn replicate_bundled_xor_small_reduced() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "replicate",
        "--plan",
        "bundled:xor_small",
        "--out-dir",
        path_str(dir.path()),
        "--reps",
        "5",
        "--noise-dims",
        "8",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["schema"], 1);
    let cell = report["cells"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["method"] == "MetricLaplace")
        .unwrap();
    assert!(cell["all_recovered"].as_f64().unwrap() >= 0.8, "{cell}");
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(csv.starts_with("method,noise_dim,p,variable,recovery"));
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
}

#[test]
fn oracle_check_contract() {
    let o = run(&["oracle-check"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    assert_eq!(
        text.lines().filter(|l| l.starts_with("PASS")).count(),
        4,
        "{text}"
    );

    let o = run(&["oracle-check", "--kernel-scale", "2"]);
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(text.contains("PASS projection_brute_force"), "{text}");
    assert!(text.contains("PASS rebalance_class_balance"), "{text}");

    let o = run(&["oracle-check", "--inject-gradient-sign-error"]);
    assert!(!o.status.success());
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(text.contains("FAIL gradient_finite_difference"), "{text}");
}
