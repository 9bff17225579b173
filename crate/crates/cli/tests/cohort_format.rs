mod common;

use std::path::Path;

use survfuse::cohort_io::{format_cohort, parse_cohort, read_cohort, read_truth, truth_path, FormatError};

fn record(id: &str, extra: &str, t1: &str) -> String {
    format!(
        r#"{{"id":"{id}","survival_days":120.5,"event":1,"grade":null,{extra}"embeddings":{{"T1":{t1},"T1PC":[0.1,0.2],"T2":[0.3,0.4],"FLAIR":[0.5,0.6],"PATH":[1.0,2.0,3.0]}}}}"#
    )
}

#[test]
fn simulated_cohort_round_trips_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = common::small_cohort(dir.path(), 40);
    let text = std::fs::read_to_string(&path).unwrap();
    let loaded = read_cohort(&path).unwrap();
    assert!(loaded.warnings.is_empty());
    assert_eq!(format_cohort(&loaded.cohort), text);
    let again = parse_cohort(&format_cohort(&loaded.cohort), &path).unwrap();
    assert_eq!(again.cohort, loaded.cohort);
}

#[test]
fn unknown_keys_warn_once_and_are_ignored() {
    let text = [
        record("a", r#""site":"x","#, "[0.0,1.0]"),
        record("b", r#""site":"y","#, "[1.0,0.0]"),
        record("c", "", "[2.0,0.5]"),
    ]
    .join("\n");
    let loaded = parse_cohort(&text, Path::new("in.jsonl")).unwrap();
    assert_eq!(loaded.cohort.len(), 3);
    assert_eq!(loaded.warnings.len(), 1, "{:?}", loaded.warnings);
    assert!(loaded.warnings[0].contains("site"));
    assert!(loaded.warnings[0].contains("in.jsonl:1"));
}

#[test]
fn missing_modality_names_record_and_line() {
    let good = record("a", "", "[0.0,1.0]");
    let bad = good.replace(r#""FLAIR":[0.5,0.6],"#, "").replace(r#""id":"a""#, r#""id":"p7""#);
    let text = format!("{good}\n{bad}\n");
    let err = parse_cohort(&text, Path::new("in.jsonl")).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, FormatError::Parse { line: 2, .. }), "{msg}");
    assert!(msg.contains("p7") && msg.contains("FLAIR"), "{msg}");
}

#[test]
fn mismatched_dimension_is_rejected() {
    let text = [record("a", "", "[0.0,1.0]"), record("b", "", "[0.0,1.0,2.0]")].join("\n");
    let err = parse_cohort(&text, Path::new("in.jsonl")).unwrap_err();
    let msg = format!("{:#}", anyhow::Error::from(err));
    assert!(msg.contains("in.jsonl"), "{msg}");
}

#[test]
fn malformed_json_reports_the_line() {
    let text = format!("{}\n{{not json\n", record("a", "", "[0.0,1.0]"));
    let err = parse_cohort(&text, Path::new("in.jsonl")).unwrap_err();
    assert!(matches!(err, FormatError::Parse { line: 2, .. }), "{err}");
}

#[test]
fn bad_event_and_grade_values_are_rejected() {
    let bad_event = record("a", "", "[0.0,1.0]").replace(r#""event":1"#, r#""event":2"#);
    assert!(parse_cohort(&bad_event, Path::new("x")).is_err());
    let bad_grade = record("a", "", "[0.0,1.0]").replace(r#""grade":null"#, r#""grade":5"#);
    assert!(parse_cohort(&bad_grade, Path::new("x")).is_err());
}

#[test]
fn truth_sidecar_aligns_with_records() {
    let dir = tempfile::tempdir().unwrap();
    let path = common::small_cohort(dir.path(), 30);
    assert_eq!(truth_path(&path), dir.path().join("cohort.truth.csv"));
    let cohort = read_cohort(&path).unwrap().cohort;
    let truth = read_truth(&truth_path(&path), &cohort).unwrap();
    assert_eq!(truth.len(), cohort.len());
    assert!(truth.iter().all(|r| r.is_finite()));
}
