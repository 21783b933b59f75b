use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use vscreen_harness::screen::{read_summary, SUMMARY_FILE};

fn vscreen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vscreen")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_scores(path: &Path) {
    let mut csv = String::from("score,label\n");
    for (s, l) in [(0.1, 0), (0.2, 0), (0.35, 1), (0.4, 0), (0.6, 1), (0.7, 1), (0.8, 1), (0.9, 1), (0.3, 0), (0.65, 0)] {
        csv.push_str(&format!("{s},{l}\n"));
    }
    fs::write(path, csv).unwrap();
}

#[test]
fn usage_errors_exit_two() {
    let o = vscreen(&["calibrate", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());

    assert_eq!(vscreen(&[]).status.code(), Some(2));
    assert_eq!(vscreen(&["frobnicate"]).status.code(), Some(2));
    // target policies need a target
    let o = vscreen(&["calibrate", "--policy", "target-sensitivity", "scores.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--target"));
    assert_eq!(vscreen(&["--help"]).status.code(), Some(0));
}

#[test]
fn calibrate_prints_an_operating_point() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.csv");
    write_scores(&scores);
    let out = dir.path().join("op.json");
    let o = vscreen(&[
        "calibrate",
        "--policy",
        "target-sensitivity",
        "--target",
        "0.9",
        scores.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let op: Value = serde_json::from_str(&stdout(&o)).unwrap();
    // five positives: sensitivity >= 0.9 needs all of them, lowest positive is 0.35;
    // negatives 0.4 and 0.65 sit above it
    assert_eq!(op["threshold"], 0.35);
    assert_eq!(op["policy"], "target-sensitivity");
    assert_eq!(op["target"], 0.9);
    assert_eq!(op["achieved_sensitivity"], 1.0);
    assert_eq!(op["achieved_specificity"], 0.6);
    assert!(op["calibration_set_id"].as_str().unwrap().starts_with("sha256:"));
    let saved: Value = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(saved, op);

    // runtime errors exit 1
    let o = vscreen(&["calibrate", "--policy", "youden", "/no/such/file.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error:"));
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "score,label\n0.5,2\n").unwrap();
    assert_eq!(vscreen(&["calibrate", "--policy", "youden", bad.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn synth_screen_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let o = vscreen(&[
        "synth", "--out", corpus.to_str().unwrap(), "--count", "6", "--size", "128", "--seed", "3",
        "--prevalence", "0.5", "--fraction-ungradable", "0.2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("wrote 6 images (3 positive, 1 ungradable)"));

    let config = dir.path().join("config.json");
    fs::write(
        &config,
        r#"{
  "working_resolution": 128,
  "operating_point": {
    "threshold": 0.5, "policy": "youden", "target": null,
    "achieved_sensitivity": 1.0, "achieved_specificity": 1.0,
    "calibration_set_id": "sha256:fixed"
  }
}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = vscreen(&[
        "screen", "--in", corpus.to_str().unwrap(), "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = read_summary(&out.join(SUMMARY_FILE)).unwrap();
    assert_eq!(rows.len(), 6);
    for row in &rows {
        let report: Value = serde_json::from_slice(&fs::read(out.join(&row.report)).unwrap()).unwrap();
        assert_eq!(report["session_id"], row.session_id.as_str());
        assert_eq!(report["referral_recommended"], row.referral_recommended);
    }
    assert_eq!(rows.iter().filter(|r| r.outcome == "ungradable").count(), 1);

    // same output directory again collides on session ids
    let o = vscreen(&[
        "screen", "--in", corpus.to_str().unwrap(), "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("already exists"));

    let o = vscreen(&["replay", "--store", out.to_str().unwrap(), "--session", &rows[0].session_id]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["session_id"], rows[0].session_id.as_str());
    assert!(v["report"].is_object());

    // a tampered report no longer matches its log
    let report_path = out.join(&rows[0].report);
    let text = fs::read_to_string(&report_path).unwrap().replace("\"patient_ref\": \"", "\"patient_ref\": \"x");
    fs::write(&report_path, text).unwrap();
    let o = vscreen(&["replay", "--store", out.to_str().unwrap(), "--session", &rows[0].session_id]);
    assert_eq!(o.status.code(), Some(1));

    let o = vscreen(&["replay", "--store", out.to_str().unwrap(), "--session", "missing"]);
    assert_eq!(o.status.code(), Some(1));

    // fewer than 50 images is too small to benchmark
    let o = vscreen(&["bench", "--corpus", corpus.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("at least 50"));
}

#[test]
fn invalid_config_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    fs::write(&config, r#"{"working_resolution": 0, "unknown_field": 1}"#).unwrap();
    let o = vscreen(&["screen", "--in", dir.path().to_str().unwrap(), "--config", config.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown_field"), "{}", stderr(&o));
}

#[test]
fn serve_reports_bind_failures() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    fs::write(
        &config,
        r#"{"operating_point": {"threshold": 0.5, "policy": "youden", "target": null,
            "achieved_sensitivity": 1.0, "achieved_specificity": 1.0, "calibration_set_id": "sha256:fixed"}}"#,
    )
    .unwrap();
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let store = dir.path().join("store");
    let o = vscreen(&["serve", "--config", config.to_str().unwrap(), "--store", store.to_str().unwrap(), "--addr", &addr]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("cannot bind"), "{}", stderr(&o));
}
