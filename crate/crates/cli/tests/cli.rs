use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_multicause"))
        .args(args)
        .output()
        .expect("spawn multicause")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["estimate", "--help"])), 0);
    assert_eq!(code(&run(&["--bogus"])), 1);
    assert_eq!(code(&run(&["estimate", "--data", "x.csv"])), 1);
    let out = run(&["fit", "--data", "/nonexistent/data.csv"]);
    assert_eq!(code(&out), 1);
    assert!(!out.stderr.is_empty());
}

#[test]
fn simulate_fit_estimate_diagnose_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let model = dir.path().join("model.json");
    let est = dir.path().join("est.json");
    let diag = dir.path().join("diag.json");

    let out = run(&["simulate", "--scenario", "fig1", "--n", "4000", "--seed", "3", "--out", p(&data)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(&data).unwrap().lines().count(), 4001);

    assert_eq!(code(&run(&["fit", "--data", p(&data), "--seed", "1", "--out", p(&model)])), 0);
    let m = json(&model);
    assert_eq!(m["k"], 2);
    assert_eq!(m["cond"].as_array().unwrap().len(), 2);

    let out = run(&[
        "estimate", "--data", p(&data), "--method", "deconfounder", "--model", p(&model),
        "--contrast", "100:000", "--bootstrap", "20", "--out", p(&est),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&est);
    assert_eq!(r["method"], "deconfounder");
    assert!((r["estimate"].as_f64().unwrap() - 1.0).abs() < 0.5);
    assert_eq!(r["replicates"], 20);

    let out = run(&[
        "diagnose", "--data", p(&data), "--model", p(&model), "--gof-replicates", "19", "--out", p(&diag),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let d = json(&diag);
    for key in ["goodness_of_fit", "degeneracy", "identifiability"] {
        assert!(d.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn identification_failure_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("iv.csv");
    // Two instrument levels cannot identify four pattern means.
    let mut text = String::from("A1,A2,Y,W\n");
    for i in 0..40 {
        text.push_str(&format!("{},{},{}.0,{}\n", i % 2, (i / 2) % 2, i % 5, (i / 4) % 2));
    }
    fs::write(&data, text).unwrap();
    let out = run(&["estimate", "--data", p(&data), "--method", "iv", "--contrast", "11:00", "--bootstrap", "0"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn stochastic_intervention_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    assert_eq!(code(&run(&["simulate", "--n", "3000", "--seed", "5", "--out", p(&data)])), 0);
    let out = run(&[
        "estimate", "--data", p(&data), "--method", "si", "--p1", "prod:0.8,0.5,0.5",
        "--p0", "prod:0.2,0.5,0.5", "--weights", "oracle", "--bootstrap", "0",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["estimand"], "delta");
    // δ = β_1 · 0.6 = 0.6 for the default scenario.
    assert!((r["estimate"].as_f64().unwrap() - 0.6).abs() < 0.4);
}

#[test]
fn mc_output_is_byte_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.toml");
    fs::write(
        &config,
        r#"
replicates = 3
base_seed = 9

[scenario]
scenario = "fig1"
n = 1000
seed = 0
prior = [0.5, 0.5]
cond = [[0.2, 0.2, 0.2], [0.8, 0.8, 0.8]]
beta0 = 1.0
beta = [1.0, 2.0, 3.0]
sigma = 1.0

[fit]
restarts = 2

[[estimators]]
method = "parametric"
contrast = "100:000"

[[estimators]]
method = "naive"
contrast = "100:000"
"#,
    )
    .unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "3", "1"] {
        let out = dir.path().join(format!("mc_{}.json", outputs.len()));
        let o = run(&["mc", "--config", p(&config), "--parallelism", threads, "--out", p(&out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);

    let csv = dir.path().join("mc.csv");
    assert_eq!(code(&run(&["mc", "--config", p(&config), "--format", "csv", "--out", p(&csv)])), 0);
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 1 + 3 * 2);
    assert!(dir.path().join("mc_long.csv").exists());

    assert_eq!(code(&run(&["mc"])), 1);
}
