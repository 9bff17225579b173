mod common;

use common::{exec, s};

fn manifest(dir: &std::path::Path, threshold: &str) -> std::path::PathBuf {
    let text = format!(
        "# tiny run\n\
         @sim simulate --n 40 --latent-dim 4 --d-rad 6 --d-path 8 --seed 2 --out $WORK/c.jsonl\n\
         ASSERT exists $WORK/c.jsonl\n\
         ASSERT sim.n == 40\n\
         ASSERT sim.oracle_c_index <= {threshold}\n\
         ASSERT sim.censored_fraction >= 0\n"
    );
    let path = dir.join("m.txt");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn passing_manifest_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path(), "1");
    let (code, out, err) = exec(&["repro", "--manifest", s(&m), "--work-dir", s(&dir.path().join("w"))]);
    assert_eq!(code, 0, "{out}{err}");
    assert!(out.contains("repro: 4 assertions, 0 failed"), "{out}");
}

#[test]
fn impossible_threshold_fails_with_observed_value() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path(), "0.1");
    let (code, out, _) = exec(&["repro", "--manifest", s(&m), "--work-dir", s(&dir.path().join("w"))]);
    assert_eq!(code, 1);
    let fail = out.lines().find(|l| l.starts_with("FAIL")).expect("a FAIL line");
    assert!(fail.contains("observed") && fail.contains("expected <= 0.1"), "{fail}");
    // Later assertions still run.
    assert!(out.contains("repro: 4 assertions, 1 failed"), "{out}");
}

#[test]
fn malformed_manifest_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.txt");
    std::fs::write(&m, "ASSERT sim.n ~ 3\n").unwrap();
    let (code, _, err) = exec(&["repro", "--manifest", s(&m), "--work-dir", s(&dir.path().join("w"))]);
    assert_eq!(code, 2, "{err}");
}
