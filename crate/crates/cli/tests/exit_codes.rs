mod common;

use common::{exec, s};

#[test]
fn help_and_version_succeed() {
    let (code, out, _) = exec(&["--help"]);
    assert_eq!(code, 0);
    for cmd in ["simulate", "train", "eval", "predict", "km", "ablate", "check", "repro"] {
        assert!(out.contains(cmd), "{cmd} missing from help");
    }
    assert_eq!(exec(&["--version"]).0, 0);
}

#[test]
fn unknown_subcommand_and_missing_flags_are_usage_errors() {
    assert_eq!(exec(&["frobnicate"]).0, 2);
    assert_eq!(exec(&["train"]).0, 2);
    assert_eq!(exec(&[]).0, 2);
}

#[test]
fn missing_input_files_are_runtime_failures() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let (code, _, err) = exec(&["train", "--cohort", s(&missing), "--out-dir", s(dir.path())]);
    assert_eq!(code, 1);
    assert!(err.contains("nope.jsonl"), "{err}");
}

#[test]
fn malformed_cohort_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"id\": 3}\n").unwrap();
    let (code, _, err) = exec(&["train", "--cohort", s(&bad), "--out-dir", s(dir.path())]);
    assert_eq!(code, 1);
    assert!(err.contains("bad.jsonl:1"), "{err}");
}
