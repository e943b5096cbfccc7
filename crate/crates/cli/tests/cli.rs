use std::path::Path;
use std::process::Command;

fn binpack(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_binpack")).args(args).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(
        out.status.success(),
        "binpack {args:?} failed:\n{stdout}\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    stdout
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn datagen_train_eval_export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = path(d, "test.jsonl");
    let run = path(d, "run");
    binpack(&["datagen", "--dims", "2", "--bin", "10x1", "--count", "6", "--seed", "3", "--out", &data]);
    let log = binpack(&[
        "train", "--dims", "2", "--bin", "10x1", "--d", "8", "--batch", "4", "--po-batch", "2", "--epochs", "2",
        "--steps-per-epoch", "2", "--eval-size", "4", "--threads", "1", "--out", &run,
    ]);
    assert!(log.contains("best eval utility"));
    for f in ["config.json", "manifest.json", "eval.jsonl", "metrics.jsonl", "last.ckpt", "best.ckpt"] {
        assert!(d.join("run").join(f).exists(), "missing {f}");
    }
    let metrics = std::fs::read_to_string(d.join("run/metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 4);

    let report = path(d, "report.json");
    let row = binpack(&["eval", "--checkpoint", &path(d, "run/best.ckpt"), "--data", &data, "--metrics", "rr,l", "--out", &report]);
    assert!(row.contains("r_u") && row.contains("r_L"));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(doc["instances"].as_array().unwrap().len(), 6);

    let row = binpack(&["eval", "--heuristic", "sorted", "--data", &data]);
    assert!(row.contains("sorted-heuristic"));

    let svg = path(d, "svg");
    binpack(&["export", "--checkpoint", &path(d, "run/best.ckpt"), "--data", &data, "--limit", "2", "--out", &svg]);
    assert_eq!(std::fs::read_dir(&svg).unwrap().count(), 2);

    // Resuming a finished run appends nothing.
    binpack(&["train", "--resume", &path(d, "run/last.ckpt"), "--out", &run]);
    let again = std::fs::read_to_string(d.join("run/metrics.jsonl")).unwrap();
    assert_eq!(again, metrics);
}

#[test]
fn selftest_passes() {
    let out = binpack(&["selftest"]);
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 3, "{out}");
}

#[test]
fn bad_arguments_are_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_binpack"))
        .args(["train", "--variant", "bogus", "--out", "/nonexistent"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
