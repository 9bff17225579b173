#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

/// Runs the CLI in-process and returns its report.
pub fn run(args: &[&str]) -> anyhow::Result<String> {
    let args: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    let mut out = Vec::new();
    survfuse::run(&args, &mut out)?;
    Ok(String::from_utf8(out).expect("utf-8 report"))
}

pub fn run_ok(args: &[&str]) -> String {
    run(args).unwrap_or_else(|e| panic!("{args:?} failed: {e:#}"))
}

/// Runs the built binary and returns (exit code, stdout, stderr).
pub fn exec(args: &[&str]) -> (i32, String, String) {
    let o = Command::new(env!("CARGO_BIN_EXE_survfuse"))
        .args(args)
        .output()
        .expect("spawn survfuse");
    (
        o.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&o.stdout).into_owned(),
        String::from_utf8_lossy(&o.stderr).into_owned(),
    )
}

pub fn value(report: &str, key: &str) -> f64 {
    let prefix = format!("{key}=");
    report
        .split_whitespace()
        .find_map(|tok| tok.strip_prefix(&prefix))
        .unwrap_or_else(|| panic!("no {key}= in report:\n{report}"))
        .parse()
        .unwrap()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small cohort with a strong signal, written to `dir/cohort.jsonl`.
pub fn small_cohort(dir: &Path, n: usize) -> PathBuf {
    let path = dir.join("cohort.jsonl");
    run_ok(&[
        "simulate",
        "--n",
        &n.to_string(),
        "--latent-dim",
        "4",
        "--d-rad",
        "6",
        "--d-path",
        "8",
        "--weight-scale",
        "2",
        "--seed",
        "3",
        "--out",
        s(&path),
    ]);
    path
}

/// Flags for a quick model: tiny widths and few epochs.
pub const QUICK: &[&str] = &[
    "--d-joint",
    "8",
    "--d-hidden",
    "8",
    "--d-h",
    "8",
    "--d-y",
    "8",
    "--epochs",
    "4",
    "--lr",
    "0.003",
    "--split-seed",
    "5",
];

pub fn train_quick(cohort: &Path, out_dir: &Path, extra: &[&str]) -> String {
    let mut args = vec!["train", "--cohort", s(cohort), "--out-dir", s(out_dir)];
    args.extend_from_slice(QUICK);
    args.extend_from_slice(extra);
    run_ok(&args)
}
