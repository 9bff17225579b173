//! JSON-Lines cohort files and the ground-truth risk sidecar.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};
use survfuse_core::data::{Cohort, EmbeddingBundle, ModalityId, PatientRecord};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}: no entry for record {id}", path.display())]
    MissingRecord { path: PathBuf, id: String },
    #[error("{}: invalid cohort", path.display())]
    Invalid {
        path: PathBuf,
        #[source]
        source: survfuse_core::Error,
    },
}

impl FormatError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        FormatError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: &Path, line: usize, message: impl Into<String>) -> Self {
        FormatError::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

const KNOWN_KEYS: [&str; 5] = ["id", "survival_days", "event", "grade", "embeddings"];

/// A loaded cohort plus warnings about ignored content.
#[derive(Debug)]
pub struct Loaded {
    pub cohort: Cohort,
    pub warnings: Vec<String>,
}

fn number_list(v: &Value) -> Option<Vec<f64>> {
    v.as_array()?.iter().map(Value::as_f64).collect()
}

fn parse_record(obj: &Map<String, Value>) -> Result<PatientRecord, String> {
    let id = obj
        .get("id")
        .and_then(Value::as_str)
        .ok_or("missing string field \"id\"")?
        .to_string();
    let survival_days = obj
        .get("survival_days")
        .and_then(Value::as_f64)
        .ok_or_else(|| format!("record {id}: missing numeric field \"survival_days\""))?;
    let event = match obj.get("event").and_then(Value::as_u64) {
        Some(0) => false,
        Some(1) => true,
        _ => return Err(format!("record {id}: \"event\" must be 0 or 1")),
    };
    let grade = match obj.get("grade") {
        None | Some(Value::Null) => None,
        Some(v) => match v.as_u64() {
            Some(g) if g <= 2 => Some(g as u8),
            _ => return Err(format!("record {id}: \"grade\" must be 0, 1, 2 or null")),
        },
    };
    let emb = obj
        .get("embeddings")
        .and_then(Value::as_object)
        .ok_or_else(|| format!("record {id}: missing object field \"embeddings\""))?;
    let mut vectors: [Vec<f64>; 5] = Default::default();
    for m in ModalityId::ALL {
        let v = emb
            .get(m.name())
            .ok_or_else(|| format!("record {id}: missing modality {m}"))?;
        vectors[m.index()] =
            number_list(v).ok_or_else(|| format!("record {id}: modality {m} must be an array of numbers"))?;
    }
    PatientRecord::new(id, EmbeddingBundle::new(vectors), survival_days, event, grade).map_err(|e| e.to_string())
}

/// Parses cohort text. Unknown top-level keys are reported once each.
pub fn parse_cohort(text: &str, path: &Path) -> Result<Loaded, FormatError> {
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let mut unknown: Vec<String> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let value: Value = serde_json::from_str(line).map_err(|e| FormatError::parse(path, line_no, e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| FormatError::parse(path, line_no, "expected a JSON object"))?;
        for k in obj.keys() {
            if !KNOWN_KEYS.contains(&k.as_str()) && !unknown.contains(k) {
                warnings.push(format!("{}:{line_no}: ignoring unknown key {k:?}", path.display()));
                unknown.push(k.clone());
            }
        }
        records.push(parse_record(obj).map_err(|m| FormatError::parse(path, line_no, m))?);
    }
    let cohort = Cohort::new(records).map_err(|source| FormatError::Invalid {
        path: path.into(),
        source,
    })?;
    Ok(Loaded { cohort, warnings })
}

pub fn read_cohort(path: &Path) -> Result<Loaded, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    parse_cohort(&text, path)
}

fn json_f64(v: f64) -> String {
    serde_json::to_string(&v).expect("finite float")
}

fn json_list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|&x| json_f64(x)).collect();
    format!("[{}]", items.join(","))
}

/// One line per record, keys in a fixed order, floats at round-trip
/// precision.
pub fn format_cohort(cohort: &Cohort) -> String {
    let mut out = String::new();
    for r in cohort.records() {
        let grade = r.grade.map_or("null".to_string(), |g| g.to_string());
        let emb: Vec<String> = ModalityId::ALL
            .iter()
            .map(|&m| format!("\"{}\":{}", m.name(), json_list(r.bundle.get(m))))
            .collect();
        writeln!(
            out,
            "{{\"id\":{},\"survival_days\":{},\"event\":{},\"grade\":{},\"embeddings\":{{{}}}}}",
            serde_json::to_string(&r.id).expect("string"),
            json_f64(r.survival_time),
            u8::from(r.event),
            grade,
            emb.join(",")
        )
        .unwrap();
    }
    out
}

pub fn write_cohort(path: &Path, cohort: &Cohort) -> Result<(), FormatError> {
    fs::write(path, format_cohort(cohort)).map_err(|e| FormatError::io(path, e))
}

/// `c.jsonl` → `c.truth.csv` in the same directory.
pub fn truth_path(cohort_path: &Path) -> PathBuf {
    let stem = cohort_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    cohort_path.with_file_name(format!("{stem}.truth.csv"))
}

pub fn write_truth(path: &Path, cohort: &Cohort, risks: &[f64]) -> Result<(), FormatError> {
    let mut out = String::from("id,true_risk\n");
    for (r, risk) in cohort.records().iter().zip(risks) {
        writeln!(out, "{},{}", r.id, risk).unwrap();
    }
    fs::write(path, out).map_err(|e| FormatError::io(path, e))
}

/// True risks aligned with the cohort's record order.
pub fn read_truth(path: &Path, cohort: &Cohort) -> Result<Vec<f64>, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    let mut by_id = std::collections::HashMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let (id, v) = line
            .rsplit_once(',')
            .ok_or_else(|| FormatError::parse(path, i + 1, "expected id,true_risk"))?;
        let v: f64 = v
            .parse()
            .map_err(|_| FormatError::parse(path, i + 1, format!("bad risk {v:?}")))?;
        by_id.insert(id.to_string(), v);
    }
    cohort
        .records()
        .iter()
        .map(|r| {
            by_id
                .get(&r.id)
                .copied()
                .ok_or_else(|| FormatError::MissingRecord {
                    path: path.into(),
                    id: r.id.clone(),
                })
        })
        .collect()
}
