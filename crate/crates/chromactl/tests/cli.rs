use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::Request;
use chromactl::api::router;
use chromactl::config::AppConfig;
use chromactl::pipeline::App;
use serde_json::{json, Value};
use tower::ServiceExt;

fn chromactl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chromactl"))
        .current_dir(dir)
        .env_remove(chromactl_core::llm::ENV_ENDPOINT)
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, cfg: &AppConfig) {
    cfg.save(&dir.join("chromactl.toml")).unwrap();
}

fn strip(mut v: Value) -> Value {
    v["timestamp"] = Value::Null;
    v
}

#[tokio::test]
async fn cli_and_api_produce_the_same_record() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = AppConfig::default();
    cfg.device.seed = 1234;
    cfg.history_path = "runs.jsonl".into();
    write_config(dir.path(), &cfg);

    let out = chromactl(dir.path(), &["mix", "I need 4 ml of a pale teal"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let from_cli: Value = serde_json::from_slice(&out.stdout).unwrap();

    let api_dir = tempfile::tempdir().unwrap();
    cfg.history_path = api_dir.path().join("runs.jsonl").to_string_lossy().into_owned();
    let app = router(Arc::new(App::from_config(cfg).unwrap()));
    let req = Request::post("/api/mix")
        .header("content-type", "application/json")
        .body(Body::from(json!({"text": "I need 4 ml of a pale teal"}).to_string()))
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    let from_api: Value = serde_json::from_slice(&to_bytes(resp.into_body(), usize::MAX).await.unwrap()).unwrap();

    assert_eq!(strip(from_cli), strip(from_api));
    assert_eq!(std::fs::read_to_string(dir.path().join("runs.jsonl")).unwrap().lines().count(), 1);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut cfg = AppConfig::default();
    cfg.history_path = String::new();
    cfg.llm.fallback = false;
    write_config(d, &cfg);

    assert_eq!(chromactl(d, &["mix", "cyan", "--no-noise"]).status.code(), Some(0));
    assert_eq!(chromactl(d, &["mix", "blorange"]).status.code(), Some(2));
    assert_eq!(chromactl(d, &["mix", "cyan", "--backend", "llm"]).status.code(), Some(4));
    assert_eq!(chromactl(d, &["calibrate", "--pump", "9"]).status.code(), Some(3));

    std::fs::write(d.join("bad.ino"), "Pump1.write(999);\nsetVolume(5);").unwrap();
    std::fs::write(d.join("good.ino"), "Pump1.write(150);\nPump3.write(150);\nsetVolume(5);").unwrap();
    let out = chromactl(d, &["check", "bad.ino"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("SETPOINT_OVER_LIMIT"));
    assert_eq!(chromactl(d, &["check", "good.ino"]).status.code(), Some(0));

    let out = chromactl(d, &["simulate", "good.ino", "--no-noise"]);
    assert_eq!(out.status.code(), Some(0));
    let result: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(result["mixed"], json!({"r": 0.0, "g": 1.0, "b": 0.0}));
    assert_eq!(chromactl(d, &["simulate", "bad.ino"]).status.code(), Some(2));
}

#[test]
fn gen_plan_dataset_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = chromactl(d, &["gen", "make 5 ml of cyan"]);
    assert_eq!(
        String::from_utf8_lossy(&out.stdout).trim(),
        "Pump1.write(144.7);\nPump2.write(0);\nPump3.write(0);\nsetVolume(5);"
    );
    let plan: Value = serde_json::from_slice(&chromactl(d, &["plan", "gray"]).stdout).unwrap();
    assert!((plan["residual"].as_f64().unwrap() - 128.0 / 255.0).abs() < 1e-9);

    assert!(chromactl(d, &["dataset", "--n", "20", "--seed", "3", "--out", "a.jsonl"]).status.success());
    assert!(chromactl(d, &["dataset", "--n", "20", "--seed", "3", "--out", "b.jsonl"]).status.success());
    let a = std::fs::read(d.join("a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.jsonl")).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 20);

    let chart: Value = serde_json::from_slice(&chromactl(d, &["eval", "chart", "--no-noise"]).stdout).unwrap();
    assert_eq!(chart["match_rate"], 1.0);
    let rel: Value =
        serde_json::from_slice(&chromactl(d, &["eval", "reliability", "--n", "10", "make 5 ml of cyan"]).stdout).unwrap();
    assert_eq!(rel["success_rate"], 1.0);
}

#[test]
fn calibrate_saves_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut cfg = AppConfig::default();
    cfg.history_path = String::new();
    cfg.device.models = vec![chromactl_core::PumpModel { k: 1.5e-4, v0: 90.0, ..Default::default() }; 3];
    write_config(d, &cfg);
    let out = chromactl(d, &["calibrate", "--pump", "2", "--no-noise"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let saved = AppConfig::load(&d.join("chromactl.toml")).unwrap();
    assert!((saved.pumps[1].k - 1.5e-4).abs() < 1e-10);
    assert!((saved.pumps[1].v0 - 90.0).abs() < 1e-6);
    assert_eq!(saved.pumps[0], chromactl_core::PumpModel::default());
}
