mod common;

use survfuse::checkpoint::{decode, encode, load, CheckpointError, MAGIC};

fn trained() -> (tempfile::TempDir, Vec<u8>) {
    let dir = tempfile::tempdir().unwrap();
    let cohort = common::small_cohort(dir.path(), 60);
    common::train_quick(&cohort, &dir.path().join("run"), &["--adapter", "mamba"]);
    let bytes = std::fs::read(dir.path().join("run/checkpoint.bin")).unwrap();
    (dir, bytes)
}

#[test]
fn decode_inverts_encode() {
    let (dir, bytes) = trained();
    let saved = load(&dir.path().join("run/checkpoint.bin")).unwrap();
    assert_eq!(&bytes[..8], MAGIC);
    assert_eq!(encode(&saved), bytes);
    assert_eq!(decode(&encode(&saved)).unwrap(), saved);
    assert_eq!(saved.run.train.epochs, 4);
    assert_eq!(saved.run.split_seed, 5);
    assert_eq!(saved.checkpoint.history.len(), 4);
    assert!(saved.checkpoint.baseline.is_some());
}

#[test]
fn every_truncation_is_an_error() {
    let (_dir, bytes) = trained();
    let step = (bytes.len() / 97).max(1);
    for cut in (0..bytes.len()).step_by(step) {
        assert!(decode(&bytes[..cut]).is_err(), "cut at {cut} decoded");
    }
}

#[test]
fn damaged_headers_are_named() {
    let (_dir, mut bytes) = trained();
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(decode(&extra), Err(CheckpointError::Trailing(1))));
    bytes[8] = 9;
    assert!(matches!(decode(&bytes), Err(CheckpointError::Version(9))));
    bytes[0] = b'X';
    assert!(matches!(decode(&bytes), Err(CheckpointError::BadMagic)));
    assert!(matches!(decode(b"SF"), Err(CheckpointError::BadMagic)));
}

#[test]
fn corrupt_checkpoint_exits_with_runtime_failure() {
    let (dir, bytes) = trained();
    let bad = dir.path().join("bad.bin");
    std::fs::write(&bad, &bytes[..bytes.len() / 2]).unwrap();
    let cohort = dir.path().join("cohort.jsonl");
    let (code, _, err) = common::exec(&[
        "eval",
        "--cohort",
        common::s(&cohort),
        "--checkpoint",
        common::s(&bad),
        "--out-dir",
        common::s(&dir.path().join("e")),
    ]);
    assert_eq!(code, 1, "{err}");
    assert!(err.contains("truncated"), "{err}");
}
