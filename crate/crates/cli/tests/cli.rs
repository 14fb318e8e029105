use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use serde_json::Value;

fn whatif(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_whatif")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen_market(dir: &Path, noise: &str) -> std::path::PathBuf {
    let data = dir.join("market.csv");
    let out = whatif(&["gen-data", "market", "--out", p(&data), "--weeks", "120", "--noise", noise]);
    assert!(out.status.success(), "{}", stderr(&out));
    data
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(whatif(&[]).status.code(), Some(2));
    assert_eq!(whatif(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(whatif(&["fit", "--model", "gbm", "--data", "x.csv"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let data = gen_market(dir.path(), "0.5");
    let out = whatif(&["fit", "--model", "arimax", "--data", p(&data), "--hyperparams", "{\"p\":\"one\"}"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error: --hyperparams"), "{}", stderr(&out));
}

#[test]
fn data_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = whatif(&["backtest", "--model", "mlr", "--data", p(&dir.path().join("missing.csv"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.starts_with("error: "), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
}

#[test]
fn noiseless_backtest_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_market(dir.path(), "0");
    let out = whatif(&["backtest", "--model", "mlr", "--data", p(&data), "--folds", "5"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let row = text.lines().find(|l| l.contains("MLR")).unwrap();
    let fields: Vec<&str> = row.split_whitespace().collect();
    assert_eq!(fields[2], "0.000", "{text}");

    let out = whatif(&["--json", "backtest", "--model", "mlr,arimax", "--data", p(&data), "--hyperparams", "{\"p\":1,\"d\":0,\"q\":0}"]);
    // One hyperparameter blob cannot describe two families.
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_scenario_has_zero_overall_diff() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_market(dir.path(), "0.5");
    let model = dir.path().join("mlr.json");
    let out = whatif(&["fit", "--model", "mlr", "--data", p(&data), "--out", p(&model)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let scenario = dir.path().join("empty.json");
    std::fs::write(&scenario, r#"{"horizon": 6}"#).unwrap();
    let out = whatif(&["whatif", "--scenario", p(&scenario), "--model-file", p(&model), "--data", p(&data)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).lines().any(|l| l == "overall_mean_diff 0"), "{}", stdout(&out));
}

#[test]
fn validate_reports_bad_imo_row() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("vessels.csv");
    std::fs::write(
        &file,
        "imo,timestamp,lat,lon,heading,speed_knots,cargo_status\n\
         9074729,2024-01-01T00:00:00Z,-20,-41,90,11,ballast\n\
         9074728,2024-01-01T06:00:00Z,-20,-41,90,11,ballast\n",
    )
    .unwrap();
    let out = whatif(&["validate", p(&file)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));

    std::fs::write(
        &file,
        "imo,timestamp,lat,lon,heading,speed_knots,cargo_status\n9074729,2024-01-01T00:00:00Z,-20,-41,90,11,ballast\n",
    )
    .unwrap();
    let out = whatif(&["validate", p(&file)]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).trim(), "ok: 1 vessel records");
}

#[test]
fn generated_vessels_aggregate_locally() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("v.csv");
    assert!(whatif(&["gen-data", "vessels", "--out", p(&file)]).status.success());
    let out = whatif(&["--json", "vessels", "--file", p(&file), "--supply", "--status", "ballast"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let body: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let counts: Vec<f64> = body["supply"]["frame"]["values"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r[0].as_f64().unwrap())
        .collect();
    assert!(!counts.is_empty());
    assert!(counts.iter().all(|c| *c <= 6.0), "{counts:?}");
}

#[test]
fn local_fit_matches_service_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_market(dir.path(), "0.5");
    let model = dir.path().join("mlr.json");
    assert!(whatif(&["fit", "--model", "mlr", "--data", p(&data), "--out", p(&model)]).status.success());
    let scenario = dir.path().join("s.json");
    std::fs::write(
        &scenario,
        r#"{"horizon": 5, "model_selection": ["MLR"], "perturbations": {"iron_ore_price": [{"step": 2, "value": 140.0}]}}"#,
    )
    .unwrap();
    let config = dir.path().join("routes.toml");
    std::fs::write(
        &config,
        r#"[[routes]]
route_id = "C3"
target = "freight_index"
exogenous = ["brazil_loadings", "iron_ore_price"]
data_file = "market.csv"
backtest_folds = 2
models = [{ kind = "MLR" }]
"#,
    )
    .unwrap();

    let cfg = whatif_service::ServiceConfig::load(&config).unwrap();
    let state = whatif_service::AppState::from_config(&cfg).unwrap();
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    rt.spawn(whatif_service::serve(listener, Arc::new(state), std::future::pending()));

    let local = whatif(&["--json", "whatif", "--scenario", p(&scenario), "--model-file", p(&model), "--data", p(&data), "--route", "C3"]);
    let remote = whatif(&["--json", "whatif", "--scenario", p(&scenario), "--server", &base, "--route", "C3"]);
    assert!(local.status.success(), "{}", stderr(&local));
    assert!(remote.status.success(), "{}", stderr(&remote));
    let local: Value = serde_json::from_str(&stdout(&local)).unwrap();
    let remote: Value = serde_json::from_str(&stdout(&remote)).unwrap();
    for key in ["scenario", "baseline", "whatif", "diff", "mean_diff_per_model", "overall_mean_diff"] {
        assert_eq!(local[key], remote[key], "{key}");
    }
    assert_ne!(local["diff"]["MLR"][2], 0.0);
}
