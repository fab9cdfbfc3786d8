use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use bgwqsd_cli::artifact::LOG_FILE;
use bgwqsd_cli::{run_pipeline, run_stage, CliError, ExperimentConfig, Stage};
use bgwqsd_core::io::load_model;
use bgwqsd_core::presets;

fn models_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn config(dir: &Path, stages: &str, extra: &str) -> ExperimentConfig {
    let text = format!(
        r#"
model = "{}"
output = "out"
stages = [{stages}]

[validate]
seed = 1

[kernel]
radius = 8

[simulate]
z0 = [1]
horizon = 12
paths = 50000
seed = 5

[yaglom]
z0 = [4]
horizons = [0, 1, 2, 3, 4]
paths = 50000
seed = 6
{extra}
"#,
        models_dir().join("model_a.toml").display()
    );
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    ExperimentConfig::load(&path).unwrap()
}

const ALL: &str =
    r#""validate", "spectral", "kernel", "qsd", "qsd-family", "lyapunov", "verify-e", "simulate", "yaglom""#;

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != LOG_FILE)
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn model_a_pipeline_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), ALL, "");
    let summary = run_pipeline(&cfg).unwrap();
    assert!(summary.passed(), "{}", summary.render());
    assert_eq!(summary.theta0, Some(0.125));
    assert_eq!(summary.upsilon0, Some(0.125));
    assert_eq!(summary.lambda_star, Some(0.375));
    for name in ["theta0 <= upsilon0", "upsilon0 <= lambda*", "theta0 <= lambda*"] {
        assert!(summary.check(name).unwrap().pass, "{name}");
    }

    // The same numbers come back from the summary file itself.
    let text = fs::read_to_string(tmp.path().join("out/summary.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(json["status"], "PASS");
    assert_eq!(json["theta0"].as_f64(), Some(0.125));
    assert_eq!(json["upsilon0"].as_f64(), Some(0.125));
    assert_eq!(json["lambda_star"].as_f64(), Some(0.375));
    assert!(text.contains("\"lambda_star\": 3.7500000000000000e-1"));
}

#[test]
fn missing_kernel_is_a_dependency_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), r#""spectral", "qsd""#, "");
    match run_pipeline(&cfg) {
        Err(CliError::Dependency { stage, missing, .. }) => assert_eq!((stage, missing), (Stage::Qsd, Stage::Kernel)),
        other => panic!("expected a dependency error, got {other:?}"),
    }
    // Running the stage alone looks for the artifact instead.
    match run_stage(&cfg, Stage::Qsd) {
        Err(CliError::Dependency { stage, missing, .. }) => assert_eq!((stage, missing), (Stage::Qsd, Stage::Kernel)),
        other => panic!("expected a dependency error, got {other:?}"),
    }
}

#[test]
fn rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), ALL, "");
    run_pipeline(&cfg).unwrap();
    let first = snapshot(&cfg.output_dir());
    run_pipeline(&cfg).unwrap();
    let second = snapshot(&cfg.output_dir());
    assert_eq!(first.keys().collect::<Vec<_>>(), second.keys().collect::<Vec<_>>());
    for (name, bytes) in &first {
        assert!(bytes == &second[name], "{name} differs between runs");
    }
    // Timestamps only appear in the log.
    assert!(fs::read_to_string(cfg.output_dir().join(LOG_FILE))
        .unwrap()
        .contains("spectral started"));
}

#[test]
fn stale_qsd_is_rejected_after_kernel_rebuild() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(tmp.path(), r#""kernel", "qsd""#, "");
    run_pipeline(&cfg).unwrap();
    cfg.kernel.radius = 5;
    run_stage(&cfg, Stage::Kernel).unwrap();
    match run_stage(&cfg, Stage::Yaglom) {
        Err(CliError::Dependency { missing, .. }) => assert_eq!(missing, Stage::Qsd),
        other => panic!("expected a dependency error, got {other:?}"),
    }
}

#[test]
fn randomized_stage_without_seed_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(tmp.path(), r#""simulate""#, "");
    cfg.simulate.seed = None;
    assert!(matches!(run_pipeline(&cfg), Err(CliError::Config(_))));
}

#[test]
fn shipped_model_files_match_presets() {
    for (file, spec) in [
        ("model_a.toml", presets::model_a()),
        ("model_b.toml", presets::model_b()),
        ("classical.toml", presets::classical_two_type()),
    ] {
        assert_eq!(
            load_model(models_dir().join(file)).unwrap().digest(),
            spec.digest(),
            "{file}"
        );
    }
}

#[test]
fn binary_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("config.toml");
    config(tmp.path(), r#""spectral", "kernel", "qsd""#, "");
    let bin = env!("CARGO_BIN_EXE_bgwqsd");

    let out = Command::new(bin)
        .args(["qsd-family", "--config"])
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dependency error"));

    let out = Command::new(bin)
        .args(["pipeline", "--config"])
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("status: PASS"));

    let out = Command::new(bin)
        .args([
            "qsd-family",
            "--anchors",
            "1;2;3",
            "--lambda-grid",
            "0.2,0.3",
            "--config",
        ])
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let fam = fs::read_to_string(tmp.path().join("out/qsd-family.json")).unwrap();
    let fam: serde_json::Value = serde_json::from_str(&fam).unwrap();
    assert_eq!(fam["entries"].as_array().unwrap().len(), 6);
}

/// A drift exponent too small for the model is a hard failure with exit 1
/// when it only shows up in the summary, and a stage error otherwise.
#[test]
fn lyapunov_with_small_exponent_fails_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(
        tmp.path(),
        r#""spectral", "kernel", "qsd", "lyapunov""#,
        "[lyapunov]\na = 2.0\n",
    );
    match run_pipeline(&cfg) {
        Err(CliError::Stage { stage, .. }) => assert_eq!(stage, Stage::Lyapunov),
        other => panic!("expected a stage error, got {other:?}"),
    }
}
