use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gaitbac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaitbac"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_version() {
    let out = gaitbac(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["ingest", "ebac", "features", "synth", "train", "sweep", "evaluate", "reproduce"] {
        assert!(text.contains(sub), "help lacks {sub}");
    }
    let out = gaitbac(&["--version"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn bad_flag_is_usage_error() {
    assert_eq!(gaitbac(&["train", "--no-such-flag"]).status.code(), Some(2));
}

#[test]
fn missing_features_reports_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = gaitbac(&[
        "train",
        "--features",
        s(&dir.path().join("absent.csv")),
        "--out",
        s(&dir.path().join("m.json")),
        "--report",
        s(&dir.path().join("r.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    assert_eq!(err["error"]["stage"], "features");
}

#[test]
fn synth_features_train_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |args: &[&str]| {
        let out = gaitbac(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    run(&["synth", "--seed", "3", "--subjects", "4", "--sessions", "3", "--out-dir", s(&d.join("synth"))]);
    run(&[
        "features",
        "--sensors",
        s(&d.join("synth/sensors")),
        "--ema",
        s(&d.join("synth/ema.json")),
        "--out-dir",
        s(&d.join("feat")),
    ]);
    let features = d.join("feat/features.csv");
    assert!(fs::read_to_string(&features).unwrap().lines().count() > 10);
    run(&[
        "train",
        "--features",
        s(&features),
        "--algo",
        "br",
        "--hidden",
        "4",
        "--max-iters",
        "20",
        "--out",
        s(&d.join("model.json")),
        "--report",
        s(&d.join("report.json")),
    ]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert!(report["br_state"]["gamma"].is_number());
    run(&[
        "evaluate",
        "--model",
        s(&d.join("model.json")),
        "--features",
        s(&features),
        "--out-dir",
        s(&d.join("eval")),
    ]);
    for f in ["metrics.json", "histogram.csv", "scatter.csv", "manifest.json"] {
        assert!(d.join("eval").join(f).is_file(), "missing {f}");
    }
}
