mod common;

use std::path::{Path, PathBuf};
use std::process::Command;

use glyphotrace::calibration::CalibrationModel;
use glyphotrace::cli::{run, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};
use glyphotrace::traffic_light::TrafficLightPolicy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use common::oracle_color;

fn manifest() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn data(name: &str) -> String {
    manifest().join("data").join(name).display().to_string()
}

fn invoke(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let code = run(
        std::iter::once("glyphotrace").chain(args.iter().copied()),
        &mut out,
    );
    (code, String::from_utf8(out).unwrap())
}

/// Compares against `tests/golden/<name>`; `GLYPHOTRACE_BLESS=1` rewrites it.
fn golden(name: &str, actual: &str) {
    let path = manifest().join("tests/golden").join(name);
    if std::env::var_os("GLYPHOTRACE_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let want = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, want, "output differs from {}", path.display());
}

#[test]
fn calibrate_golden() {
    let csv = data("calibration.csv");
    let (code, text) = invoke(&["calibrate", &csv, "--candidates", "560,585"]);
    assert_eq!(code, EXIT_OK);
    golden("calibrate.txt", &text);
    assert!(text.contains("8.0988"));
    assert!(text.contains("-1318.2455"));

    let (code, json) = invoke(&["calibrate", &csv, "--json"]);
    assert_eq!(code, EXIT_OK);
    golden("calibrate.json", &json);
    let v: Value = serde_json::from_str(&json).unwrap();
    assert!((v["model"]["slope"].as_f64().unwrap() - 8.0988).abs() < 0.0005);
}

#[test]
fn classify_golden() {
    let csv = data("validation_handheld.csv");
    let model = data("model_handheld.json");
    let (code, text) = invoke(&["classify", &csv, "--model", &model]);
    assert_eq!(code, EXIT_OK);
    golden("classify.txt", &text);
    let (code, json) = invoke(&["classify", &csv, "--model", &model, "--json"]);
    assert_eq!(code, EXIT_OK);
    golden("classify.json", &json);
}

#[test]
fn replay_golden() {
    let (code, text) = invoke(&["replay"]);
    assert_eq!(code, EXIT_OK);
    golden("replay.txt", &text);
    let (code, json) = invoke(&["replay", "--json"]);
    assert_eq!(code, EXIT_OK);
    let v: Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["validation_rows"].as_array().unwrap().len(), 30);
}

#[test]
fn simulate_golden() {
    let scenario = manifest()
        .join("scenarios/fleet.json")
        .display()
        .to_string();
    let dir = tempfile::tempdir().unwrap();
    let events = dir.path().join("events.jsonl").display().to_string();
    let (code, text) = invoke(&["simulate", &scenario, "--events", &events]);
    assert_eq!(code, EXIT_OK);
    golden("simulate.txt", &text);
    let log = std::fs::read_to_string(&events).unwrap();
    assert_eq!(log.lines().count(), 18);
    for line in log.lines() {
        serde_json::from_str::<Value>(line).unwrap();
    }

    let store = dir.path().join("store");
    let store = store.display().to_string();
    let (code, _) = invoke(&["simulate", &scenario, "--data-dir", &store, "--json"]);
    assert_eq!(code, EXIT_OK);
    assert!(Path::new(&store).read_dir().unwrap().next().is_some());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let header = std::fs::read_to_string(data("calibration.csv")).unwrap();
    let one_row: String = header.lines().take(2).map(|l| format!("{l}\n")).collect();
    let one = dir.path().join("one.csv");
    std::fs::write(&one, one_row).unwrap();
    let one = one.display().to_string();

    assert_eq!(invoke(&["calibrate", &one]).0, EXIT_USAGE);
    assert_eq!(
        invoke(&["calibrate", "/does/not/exist.csv"]).0,
        EXIT_FAILURE
    );
    assert_eq!(
        invoke(&["calibrate", &data("calibration.csv"), "--channel", "561"]).0,
        EXIT_USAGE
    );
    assert_eq!(
        invoke(&["classify", &data("validation_handheld.csv")]).0,
        EXIT_USAGE
    );
    assert_eq!(
        invoke(&[
            "classify",
            &data("validation_handheld.csv"),
            "--model",
            &one
        ])
        .0,
        EXIT_USAGE
    );
    assert_eq!(invoke(&["frobnicate"]).0, EXIT_USAGE);
    assert_eq!(
        invoke(&["simulate", &data("calibration.csv")]).0,
        EXIT_USAGE
    );

    let (code, help) = invoke(&["--help"]);
    assert_eq!(code, EXIT_OK);
    assert!(help.contains("calibrate"));
    let (code, version) = invoke(&["--version"]);
    assert_eq!(code, EXIT_OK);
    assert!(version.contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_glyphotrace");
    let ok = Command::new(bin).arg("replay").output().unwrap();
    assert_eq!(ok.status.code(), Some(EXIT_OK));
    assert!(String::from_utf8_lossy(&ok.stdout).ends_with("all cells reproduced\n"));
    let missing = Command::new(bin)
        .args(["calibrate", "/does/not/exist.csv"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(EXIT_FAILURE));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error:"));
    let bad = Command::new(bin).arg("--bogus").output().unwrap();
    assert_eq!(bad.status.code(), Some(EXIT_USAGE));
}

/// Random readings through the CLI agree with the library and the
/// hand-written band check.
#[test]
fn classify_matches_the_library() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("sample_id,concentration_mg_l,r560\n");
    let mut readings = Vec::new();
    for i in 0..300 {
        let r: f64 = (rng.random_range(50.0..450.0f64) * 100.0).round() / 100.0;
        csv.push_str(&format!("R{i},0,{r}\n"));
        readings.push(r);
    }
    let path = dir.path().join("rows.csv");
    std::fs::write(&path, csv).unwrap();
    for (instrument, file) in [
        ("handheld", "model_handheld.json"),
        ("lab", "model_lab.json"),
    ] {
        let (code, json) = invoke(&[
            "classify",
            &path.display().to_string(),
            "--model",
            &data(file),
            "--json",
        ]);
        assert_eq!(code, EXIT_OK);
        let v: Value = serde_json::from_str(&json).unwrap();
        let rows = v["rows"].as_array().unwrap();
        assert_eq!(rows.len(), readings.len());
        let (model, policy, (neg, pos)) = match instrument {
            "handheld" => (
                CalibrationModel::handheld(),
                TrafficLightPolicy::handheld(),
                (-62.0, 538.0),
            ),
            _ => (
                CalibrationModel::lab(),
                TrafficLightPolicy::lab(),
                (-57.0, 586.0),
            ),
        };
        for (row, &r) in rows.iter().zip(&readings) {
            let value = row["value"].as_f64().unwrap();
            assert_eq!(value, model.intercept + model.slope * r);
            let color: glyphotrace::TrafficLight =
                serde_json::from_value(row["result"].clone()).unwrap();
            assert_eq!(color, policy.classify(value));
            assert_eq!(color, oracle_color(value, neg, pos));
        }
    }
}
