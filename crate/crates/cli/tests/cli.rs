use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

use maskwatch_core::live::SyntheticSpec;
use maskwatch_core::model::{build_model, default_label_map, save_artifact, ModelConfig, TrainingMeta};
use maskwatch_core::preprocess::PreprocessConfig;
use serde_json::Value;

fn maskwatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maskwatch"))
        .args(args)
        .env_remove("MASKWATCH_CONFIG")
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = maskwatch(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let last = text.lines().last().unwrap_or_default();
    serde_json::from_str(last).unwrap_or_else(|e| panic!("stderr is not one JSON line ({e}): {text}"))
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn every_subcommand_has_help() {
    for sub in ["synth", "ingest", "train", "eval", "run", "alert-test"] {
        let out = ok(&[sub, "--help"]);
        assert!(out.contains("Usage"), "{sub}: {out}");
    }
}

#[test]
fn unknown_flags_fail_with_a_json_error() {
    let out = maskwatch(&["ingest", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "usage");
}

#[test]
fn config_errors_list_every_bad_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[alerts]\nthreshold = 3.0\ncooldown_s = -1.0\n[hyperparams]\nbatch_size = 0\n").unwrap();
    let out = maskwatch(&["--config", &s(&cfg), "alert-test", "--out", &s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "config");
    assert_eq!(err["details"].as_array().unwrap().len(), 3, "{err}");
}

#[test]
fn environment_config_sits_between_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("a.json");
    let env = dir.path().join("b.json");
    std::fs::write(&file, r#"{"seed": 1, "alerts": {"cooldown_s": 4}}"#).unwrap();
    std::fs::write(&env, r#"{"seed": 2}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_maskwatch"))
        .args(["--config", &s(&file), "alert-test", "--out", &s(&dir.path().join("o"))])
        .env("MASKWATCH_CONFIG", &env)
        .output()
        .unwrap();
    assert!(out.status.success());
    let resolved: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("o/resolved-config.json")).unwrap()).unwrap();
    assert_eq!(resolved["seed"], 2);
    assert_eq!(resolved["alerts"]["cooldown_s"], 4.0);
}

#[test]
fn ingest_is_byte_identical_and_reproducible_from_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--seed", "3", "--out", &s(&data), "--per-class", "6", "--image-size", "64"]);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    ok(&["ingest", "--seed", "42", "--root", &s(&data), "--out", &s(&a)]);
    ok(&["ingest", "--seed", "42", "--root", &s(&data), "--out", &s(&b)]);
    ok(&["--config", &s(&a.join("resolved-config.json")), "ingest", "--out", &s(&c)]);
    for f in ["manifest.json", "train.mwtc", "validation.mwtc", "preprocess.json"] {
        let x = std::fs::read(a.join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.join(f)).unwrap(), "{f} differs between runs");
        assert_eq!(x, std::fs::read(c.join(f)).unwrap(), "{f} differs when rerun from resolved config");
    }
}

#[test]
fn eval_prints_the_report_layout_from_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("pred.csv");
    let mut text = String::from("y_true,y_pred\n");
    for (t, p, n) in [(0, 0, 83), (0, 1, 17), (1, 0, 2), (1, 1, 98)] {
        for _ in 0..n {
            text.push_str(&format!("{t},{p}\n"));
        }
    }
    std::fs::write(&csv, text).unwrap();
    let table = ok(&["eval", "--predictions", &s(&csv), "--out", &s(&dir.path().join("eval"))]);
    let rows: Vec<Vec<&str>> = table.lines().map(|l| l.split_whitespace().collect()).filter(|r: &Vec<&str>| !r.is_empty()).collect();
    assert_eq!(rows[0], ["precision", "recall", "f1-score", "support"]);
    assert_eq!(rows[1], ["With_Face_Mask", "0.98", "0.83", "0.90", "100"]);
    assert_eq!(rows[2], ["Without_Mask", "0.85", "0.98", "0.91", "100"]);
    assert_eq!(rows[3], ["accuracy", "0.91", "200"]);
    // Reference averages are printed to two places, so allow one unit of rounding.
    for (row, name, printed) in [(&rows[4], "macro", [0.92, 0.90, 0.90]), (&rows[5], "weighted", [0.92, 0.91, 0.90])] {
        assert_eq!(row[..2], [name, "avg"]);
        assert_eq!(row[5], "200");
        for (cell, want) in row[2..5].iter().zip(printed) {
            let got: f64 = cell.parse().unwrap();
            assert!((got - want).abs() <= 0.01 + 1e-9, "{name}: {cell} vs {want}");
        }
    }
    assert!(dir.path().join("eval/report.json").exists());
}

#[test]
fn run_on_synthetic_spec_conserves_frames() {
    let dir = tempfile::tempdir().unwrap();
    let artifact = dir.path().join("m.mwma");
    let model = build_model(ModelConfig { num_classes: 2, freeze_backbone: true, seed: 1 }).unwrap();
    let meta = TrainingMeta {
        epochs: 0,
        seed: 1,
        dataset_fingerprint: "none".into(),
        final_val_accuracy: 0.0,
        final_val_loss: 0.0,
        backbone_init: "random".into(),
        best_epoch: None,
    };
    save_artifact(&model, &default_label_map(), &PreprocessConfig::default(), &meta, &artifact).unwrap();
    let spec = dir.path().join("fixture.json");
    std::fs::write(&spec, serde_json::to_string(&SyntheticSpec::alternating(12, 4, 2)).unwrap()).unwrap();
    let out = dir.path().join("live");
    ok(&["run", "--source", &s(&spec), "--artifact", &s(&artifact), "--out", &s(&out), "--no-display", "--save-frames"]);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let sm = &summary["summary"];
    assert_eq!(sm["frames_seen"], 12);
    assert_eq!(sm["frames_seen"].as_u64().unwrap(), sm["frames_processed"].as_u64().unwrap() + sm["frames_dropped"].as_u64().unwrap());
    assert_eq!(std::fs::read_to_string(out.join("run_log.jsonl")).unwrap().lines().count(), 12);
    assert_eq!(std::fs::read_dir(out.join("frames")).unwrap().count(), 12);
}

#[test]
fn run_reports_a_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = maskwatch(&["run", "--source", "0", "--artifact", &s(&dir.path().join("nope.mwma")), "--out", &s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "missing_input");
}

#[test]
fn alert_test_fails_when_the_webhook_is_unreachable() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"alerts": {"backoff_base_ms": 1, "webhook_timeout_ms": 500}}"#).unwrap();
    let url = format!("http://127.0.0.1:{port}/hook");
    let out = maskwatch(&["--config", &s(&cfg), "alert-test", "--webhook-url", &url, "--out", &s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "failed");
    assert!(dir.path().join("alerts/deadletter.jsonl").exists());
}
