//! End-to-end exercises of the `nsr` binary: each subcommand on a miniature
//! corpus, plus the exit-code and config-validation contracts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn nsr() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_nsr"));
    c.env("NSR_THREADS", "1");
    c
}

fn run(args: &[&str]) -> Output {
    nsr().args(args).output().expect("binary runs")
}

fn stderr_line(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).trim().to_string()
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("nsr-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Synthesize a tiny corpus once and reuse it across the pipeline test.
fn prepare_corpus(dir: &Path) {
    let out = run(&[
        "prepare",
        "--out",
        dir.to_str().unwrap(),
        "--seed",
        "9",
        "--per-class",
        "12",
        "--test-per-class",
        "4",
    ]);
    assert!(out.status.success(), "prepare failed: {}", stderr_line(&out));
    for f in ["train.csv", "val.csv", "test.csv", "manifest.json"] {
        assert!(dir.join(f).exists(), "prepare did not write {f}");
    }
}

#[test]
fn pipeline_prepare_train_attack_report() {
    let dir = tmp_dir("pipeline");
    prepare_corpus(&dir);

    // Balanced training split: every class upsampled to the same count.
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    let counts = &manifest["splits"][0]["class_counts"];
    let n = counts["N"].as_u64().unwrap();
    for class in ["S", "V", "F", "Q"] {
        assert_eq!(counts[class].as_u64().unwrap(), n, "train split not balanced");
    }

    // Train a tiny MLP for two epochs.
    let train_cfg = dir.join("train.json");
    std::fs::write(
        &train_cfg,
        serde_json::json!({
            "train_csv": dir.join("train.csv").to_str().unwrap(),
            "val_csv": dir.join("val.csv").to_str().unwrap(),
            "widths": [187, 8, 5],
            "epochs": 2,
            "batch_size": 16,
            "seed": 11,
        })
        .to_string(),
    )
    .unwrap();
    let model_dir = dir.join("run");
    let out = run(&["train", "--config", train_cfg.to_str().unwrap(), "--out", model_dir.to_str().unwrap()]);
    assert!(out.status.success(), "train failed: {}", stderr_line(&out));
    assert!(model_dir.join("model.json").exists());
    let log = std::fs::read_to_string(model_dir.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3, "expected header + 2 epoch rows");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(model_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert!(manifest["config_digest"].is_u64(), "manifest must record the config digest");
    assert_eq!(manifest["config"]["epochs"], 2);

    // Attack the checkpoint on the test split.
    let attack_cfg = dir.join("attack.json");
    std::fs::write(
        &attack_cfg,
        serde_json::json!({
            "data_csv": dir.join("test.csv").to_str().unwrap(),
            "eps_grid": [0.0, 0.1],
            "steps": 3,
            "method": "ce",
        })
        .to_string(),
    )
    .unwrap();
    let curves = dir.join("curves");
    let curve = curves.join("mlp_ce_pgd3.csv");
    let out = run(&[
        "attack",
        "--model",
        model_dir.join("model.json").to_str().unwrap(),
        "--method",
        "pgd",
        "--config",
        attack_cfg.to_str().unwrap(),
        "--out",
        curve.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "attack failed: {}", stderr_line(&out));
    let csv = std::fs::read_to_string(&curve).unwrap();
    assert!(csv.starts_with("eps,accuracy\n"));
    assert_eq!(csv.lines().count(), 3);
    assert!(curve.with_extension("manifest.json").exists());

    // Aggregate the curve directory into a comparison report.
    let report_dir = dir.join("report");
    let out = run(&[
        "report",
        "--in",
        curves.to_str().unwrap(),
        "--out",
        report_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "report failed: {}", stderr_line(&out));
    assert!(report_dir.join("mlp_ce_pgd3.svg").exists());

    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn unknown_config_key_is_a_validation_error() {
    let dir = tmp_dir("badkey");
    let cfg = dir.join("train.json");
    std::fs::write(&cfg, r#"{"train_csv": "x.csv", "learning_rate": 0.1}"#).unwrap();
    let out = run(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_line(&out);
    assert!(err.starts_with("error: validation:"), "got {err:?}");
    assert!(err.contains("learning_rate"), "reason must name the rejected key, got {err:?}");
    assert_eq!(err.lines().count(), 1, "error must be a single line");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn missing_input_file_is_a_validation_error() {
    let dir = tmp_dir("missing");
    let cfg = dir.join("train.json");
    std::fs::write(&cfg, r#"{"train_csv": "/nonexistent/beats.csv"}"#).unwrap();
    let out = run(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_line(&out).starts_with("error: validation:"));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn gradcheck_reduced_fuzz_passes() {
    let out = run(&["gradcheck", "--arch", "mlp", "--seed", "7", "--fuzz", "200"]);
    assert!(out.status.success(), "gradcheck failed: {}", stderr_line(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().filter(|l| l.starts_with("[PASS]")).count() >= 6);
    assert!(!stdout.contains("[FAIL]"));
}

#[test]
fn bad_threads_value_is_rejected() {
    let out = nsr()
        .env("NSR_THREADS", "zero")
        .args(["gradcheck", "--fuzz", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_line(&out).starts_with("error: validation:"));

    let out = run(&["--threads", "0", "gradcheck", "--fuzz", "1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_enumerates_config_keys() {
    let out = run(&["train", "--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for key in
        ["train_csv", "widths", "loss", "beta1", "beta2", "epochs", "lr", "batch_size", "seed"]
    {
        assert!(text.contains(key), "train --help must document {key}");
    }
    assert!(text.contains("0.001") && text.contains("128"), "defaults must be listed");
}
