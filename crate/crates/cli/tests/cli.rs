use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn handcast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_handcast"))
        .args(args)
        .output()
        .expect("spawn handcast")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const TINY: &str = r#"{
  "synth": {"scenario": "pick-place"},
  "splits": {"train": 4, "val": 1, "test": 2},
  "model": {"latent_dim": 8, "feature_dim": 8, "heads": 2, "d_state": 4, "voxels": false},
  "diffusion": {"steps": 10, "hmf_steps": 5},
  "training": {"epochs": 2, "batch_size": 4, "eval_every": 1}
}"#;

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    let out = handcast(&["synth", "--bogus"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(code(&handcast(&["--help"])), 0);
    assert_eq!(code(&handcast(&[])), 1);
}

#[test]
fn missing_files_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = handcast(&[
        "eval",
        "--predictions",
        missing.to_str().unwrap(),
        "--reference",
        "x.json",
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
    let out = handcast(&[
        "--config",
        missing.to_str().unwrap(),
        "synth",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn invalid_configuration_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"synth": {"scenario": "juggling"}}"#).unwrap();
    let out = handcast(&[
        "--config",
        cfg.to_str().unwrap(),
        "synth",
        "--out",
        dir.path().join("d").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    fs::write(&cfg, r#"{"unknown_section": {}}"#).unwrap();
    let out = handcast(&[
        "--config",
        cfg.to_str().unwrap(),
        "synth",
        "--out",
        dir.path().join("d").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn corrupted_gradient_check_fails() {
    let out = handcast(&["gradcheck", "--corrupt-gradient", "--latent-dim", "4"]);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    fs::write(root.join("cfg.json"), TINY).unwrap();
    let cfg = p("cfg.json");
    let run = |args: &[&str]| {
        let out = handcast(args);
        assert_eq!(
            code(&out),
            0,
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    };

    run(&[
        "--config",
        &cfg,
        "--seed",
        "7",
        "synth",
        "--out",
        &p("data"),
    ]);
    run(&[
        "--config",
        &cfg,
        "--seed",
        "7",
        "train",
        "--data",
        &p("data"),
        "--out",
        &p("ckpt"),
    ]);
    let log = fs::read_to_string(root.join("ckpt/train_log.ndjson")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let rec: serde_json::Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    assert!(rec["val_ade"].as_f64().unwrap().is_finite());
    assert_eq!(json(&root.join("ckpt/manifest.json"))["format_version"], 1);

    run(&[
        "--config",
        &cfg,
        "infer",
        "--data",
        &p("data"),
        "--checkpoint",
        &p("ckpt"),
        "--out",
        &p("model"),
    ]);
    run(&[
        "--config",
        &cfg,
        "infer",
        "--data",
        &p("data"),
        "--baseline",
        "cvh",
        "--out",
        &p("cvh"),
    ]);
    let preds = json(&root.join("model/predictions.json"));
    assert_eq!(preds["format_version"], 1);
    assert_eq!(preds["predictions"].as_array().unwrap().len(), 2);

    let out = run(&[
        "--config",
        &cfg,
        "eval",
        "--predictions",
        &p("model/predictions.json"),
        "--data",
        &p("data"),
        "--out",
        &p("eval"),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("ADE"));
    let report = json(&root.join("eval/eval_report.json"));
    assert_eq!(report["format_version"], 1);
    assert_eq!(report["units"], "meters");
    assert_eq!(report["mae_units"], "frames");
    assert!(report["ade"].as_f64().unwrap() >= 0.0);
    assert!(report["cvh_ade"].as_f64().is_some());
    let curve = report["error_curve"].as_array().unwrap().len();

    run(&[
        "eval",
        "--predictions",
        &p("cvh/predictions.json"),
        "--reference",
        &p("cvh/predictions.json"),
        "--out",
        &p("self"),
    ]);
    let same = json(&root.join("self/eval_report.json"));
    assert_eq!(same["ade"].as_f64(), Some(0.0));
    assert_eq!(same["fde"].as_f64(), Some(0.0));

    run(&[
        "--config",
        &cfg,
        "export-actions",
        "--predictions",
        &p("model/predictions.json"),
        "--out",
        &p("exp"),
    ]);
    let schedules: Vec<_> = fs::read_dir(root.join("exp/actions")).unwrap().collect();
    assert_eq!(schedules.len(), 2);
    for entry in schedules {
        let s = json(&entry.unwrap().path());
        assert_eq!(s["format_version"], 1);
        assert_eq!(s["units"], "meters");
        let events = s["events"].as_array().unwrap();
        for w in events.windows(2) {
            assert_ne!(w[0]["action"], w[1]["action"]);
        }
    }

    run(&[
        "--config",
        &cfg,
        "export-features",
        "--data",
        &p("data"),
        "--checkpoint",
        &p("ckpt"),
        "--out",
        &p("exp"),
    ]);
    assert_eq!(fs::read_dir(root.join("exp/features")).unwrap().count(), 2);

    run(&[
        "plot-errors",
        "--report",
        &p("eval/eval_report.json"),
        "--out",
        &p("plot"),
    ]);
    let csv = fs::read_to_string(root.join("plot/error_curve.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("frame,mean_error"));
    assert_eq!(csv.lines().count(), curve + 1);
}

#[test]
fn action_export_needs_states() {
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("p.json");
    fs::write(
        &preds,
        r#"{"format_version": 1, "source": "x", "predictions": [
            {"clip_id": "a", "joint_id": 0, "trajectory": [[0.0, 0.0, 0.0]], "states": null}
        ]}"#,
    )
    .unwrap();
    let out = handcast(&[
        "export-actions",
        "--predictions",
        preds.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
}
