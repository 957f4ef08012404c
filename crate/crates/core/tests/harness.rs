use multicause::harness::{
    emit_report, long_csv, replicate_seed, rows_csv, run_experiment, ExperimentConfig, MCSummary,
    ReportFormat,
};

const BASE: &str = r#"
replicates = 6
base_seed = 11
parallelism = 1

[scenario]
scenario = "fig1"
n = 3000
seed = 0
prior = [0.5, 0.5]
cond = [[0.2, 0.2, 0.2, 0.2], [0.8, 0.8, 0.8, 0.8]]
beta0 = 1.0
beta = [1.0, 2.0, 3.0, 4.0]
sigma = 1.0

[fit]
restarts = 3

[[estimators]]
method = "parametric"
contrast = "1000:0000"
bootstrap = 10

[[estimators]]
method = "si"
p1 = "prod:0.7,0.5,0.5,0.5"
p0 = "prod:0.3,0.5,0.5,0.5"
weights = "posterior_mixture"
"#;

fn config(extra: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(&format!("{BASE}{extra}")).unwrap()
}

fn with(f: impl FnOnce(&mut ExperimentConfig)) -> ExperimentConfig {
    let mut cfg = config("");
    f(&mut cfg);
    cfg
}

#[test]
fn single_replicate_runs() {
    let s = run_experiment(&with(|c| c.replicates = 1)).unwrap();
    assert_eq!(s.rows.len(), 2);
    assert!(s.rows.iter().all(|r| r.error.is_none() && r.estimate.is_some()));
    assert_eq!(s.estimators[0].successes, 1);
    assert_eq!(s.estimators[0].sd, Some(0.0));
}

#[test]
fn output_does_not_depend_on_thread_count() {
    let one = run_experiment(&config("")).unwrap().to_json().unwrap();
    let four = run_experiment(&with(|c| c.parallelism = 4)).unwrap().to_json().unwrap();
    assert_eq!(one, four);
    assert_eq!(one, run_experiment(&config("")).unwrap().to_json().unwrap());
}

#[test]
fn replicates_are_isolated() {
    let short = run_experiment(&with(|c| c.replicates = 3)).unwrap();
    let long = run_experiment(&config("")).unwrap();
    assert_eq!(short.rows[..], long.rows[..short.rows.len()]);
    for (r, row) in long.rows.iter().step_by(2).enumerate() {
        assert_eq!(row.seed, replicate_seed(11, r));
    }
    let seeds: std::collections::HashSet<u64> = long.rows.iter().map(|r| r.seed).collect();
    assert_eq!(seeds.len(), 6);
}

#[test]
fn appending_an_estimator_leaves_the_others_unchanged() {
    let base = run_experiment(&config("")).unwrap();
    let more = run_experiment(&config(
        "\n[[estimators]]\nmethod = \"naive\"\ncontrast = \"1000:0000\"\nbootstrap = 5\n",
    ))
    .unwrap();
    for name in ["parametric", "si"] {
        let a: Vec<_> = base.rows.iter().filter(|r| r.estimator == name).collect();
        let b: Vec<_> = more.rows.iter().filter(|r| r.estimator == name).collect();
        assert_eq!(a, b);
    }
}

#[test]
fn summary_matches_the_rows() {
    let s = run_experiment(&config("")).unwrap();
    let par = s.estimator("parametric").unwrap();
    let est: Vec<f64> = s.rows.iter().filter(|r| r.estimator == "parametric").map(|r| r.estimate.unwrap()).collect();
    let n = est.len() as f64;
    let mean = est.iter().sum::<f64>() / n;
    let sd = (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
    let rmse = (est.iter().map(|e| (e - 1.0).powi(2)).sum::<f64>() / n).sqrt();
    assert!((par.mean.unwrap() - mean).abs() < 1e-12);
    assert!((par.bias.unwrap() - (mean - 1.0)).abs() < 1e-12);
    assert!((par.sd.unwrap() - sd).abs() < 1e-12);
    assert!((par.rmse.unwrap() - rmse).abs() < 1e-12);
    // Population formulas: RMSE² = bias² + SD².
    assert!((rmse.powi(2) - par.bias.unwrap().powi(2) - sd.powi(2)).abs() < 1e-9);
    assert!(par.mean_se.unwrap() > 0.0);
    // Oracle for the shifted product distributions is β_1 · 0.4.
    let si = s.rows.iter().find(|r| r.estimator == "si").unwrap();
    assert!((si.oracle.unwrap() - 0.4).abs() < 1e-12);
}

#[test]
fn failures_are_recorded_not_propagated() {
    let s = run_experiment(&config(
        "\n[[estimators]]\nmethod = \"iv\"\ncontrast = \"1000:0000\"\n",
    ))
    .unwrap();
    let iv = s.estimator("iv").unwrap();
    assert_eq!((iv.successes, iv.failures), (0, 6));
    assert_eq!(iv.mean, None);
    assert!(s.rows.iter().filter(|r| r.estimator == "iv").all(|r| r.error.is_some()));
    assert_eq!(s.estimator("parametric").unwrap().failures, 0);
}

#[test]
fn repeated_methods_get_indexed_labels() {
    let s = run_experiment(&with(|c| {
        c.replicates = 1;
        c.estimators.push(c.estimators[0].clone());
    }))
    .unwrap();
    let names: Vec<&str> = s.estimators.iter().map(|e| e.estimator.as_str()).collect();
    assert_eq!(names, ["parametric_0", "si", "parametric_2"]);
}

#[test]
fn reports_round_trip_and_have_one_row_per_result() {
    let s = run_experiment(&config("")).unwrap();
    assert_eq!(MCSummary::from_json(&s.to_json().unwrap()).unwrap(), s);
    assert_eq!(rows_csv(&s).lines().count(), 1 + 6 * 2);
    assert!(long_csv(&s).lines().skip(1).all(|l| l.split(',').count() == 4));

    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(&s, ReportFormat::Csv, &dir.path().join("mc.csv")).unwrap();
    assert_eq!(files.len(), 2);
    assert!(files[1].ends_with("mc_long.csv"));
    let json = dir.path().join("mc.json");
    emit_report(&s, ReportFormat::Json, &json).unwrap();
    let back = MCSummary::from_json(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(back, s);
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(ExperimentConfig::from_toml_str(&BASE.replace("replicates = 6", "replicates = 0")).is_err());
    assert!(ExperimentConfig::from_toml_str(&BASE.replace("method = \"si\"", "method = \"bogus\"")).is_err());
    assert!(ExperimentConfig::from_toml_str(&BASE.replace("n = 3000", "n = 0")).is_err());
}
