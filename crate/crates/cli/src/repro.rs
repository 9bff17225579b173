//! Manifest runner: CLI invocations interleaved with assertions.
//!
//! ```text
//! # comment
//! simulate --n 300 --seed 7 --out $WORK/c.jsonl
//! @fit train --cohort $WORK/c.jsonl --out-dir $WORK/run
//! ASSERT fit.elapsed_seconds <= 60
//! ASSERT c_index >= oracle_c_index - 0.10
//! ASSERT exists $WORK/run/checkpoint.bin
//! ASSERT same $WORK/a/checkpoint.bin $WORK/b/checkpoint.bin
//! ```
//!
//! Every `key=value` token printed by an invocation with a numeric value is
//! recorded under `key` (later steps overwrite) and, for a step labelled
//! `@name`, also under `name.key`. Each step additionally records
//! `elapsed_seconds`. `$WORK` expands to the working directory and `$HERE` to
//! the directory holding the manifest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("manifest line {line}: {message}")]
pub struct ManifestError {
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Op {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl Op {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "<" => Op::Lt,
            "<=" => Op::Le,
            ">" => Op::Gt,
            ">=" => Op::Ge,
            "==" => Op::Eq,
            "!=" => Op::Ne,
            _ => return None,
        })
    }

    fn symbol(self) -> &'static str {
        match self {
            Op::Lt => "<",
            Op::Le => "<=",
            Op::Gt => ">",
            Op::Ge => ">=",
            Op::Eq => "==",
            Op::Ne => "!=",
        }
    }

    fn holds(self, a: f64, b: f64) -> bool {
        match self {
            Op::Lt => a < b,
            Op::Le => a <= b,
            Op::Gt => a > b,
            Op::Ge => a >= b,
            Op::Eq => a == b,
            Op::Ne => a != b,
        }
    }
}

/// `number`, `key`, or `key ± number`.
#[derive(Clone, Debug, PartialEq)]
pub struct Operand {
    pub key: Option<String>,
    pub offset: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Assertion {
    Compare { key: String, op: Op, rhs: Operand },
    Exists(String),
    Same(String, String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepKind {
    Invoke { label: Option<String>, args: Vec<String> },
    Assert(Assertion),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub line: usize,
    pub text: String,
    pub kind: StepKind,
}

fn parse_operand(tokens: &[&str], line: usize) -> Result<Operand, ManifestError> {
    let err = |m: &str| ManifestError {
        line,
        message: m.into(),
    };
    let number = |s: &str| s.parse::<f64>().map_err(|_| err(&format!("expected a number, got {s:?}")));
    match tokens {
        [v] => Ok(match v.parse::<f64>() {
            Ok(x) => Operand { key: None, offset: x },
            Err(_) => Operand {
                key: Some(v.to_string()),
                offset: 0.0,
            },
        }),
        [k, sign @ ("+" | "-"), v] => {
            let x = number(v)?;
            Ok(Operand {
                key: Some(k.to_string()),
                offset: if *sign == "-" { -x } else { x },
            })
        }
        _ => Err(err("expected `number`, `key` or `key +/- number`")),
    }
}

pub fn parse_manifest(text: &str) -> Result<Vec<Step>, ManifestError> {
    let mut steps = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        let err = |m: String| ManifestError { line, message: m };
        let kind = if tokens[0] == "ASSERT" {
            StepKind::Assert(match &tokens[1..] {
                ["exists", p] => Assertion::Exists(p.to_string()),
                ["same", a, b] => Assertion::Same(a.to_string(), b.to_string()),
                [key, op, rest @ ..] => Assertion::Compare {
                    key: key.to_string(),
                    op: Op::parse(op).ok_or_else(|| err(format!("unknown operator {op:?}")))?,
                    rhs: parse_operand(rest, line)?,
                },
                _ => return Err(err("malformed ASSERT".into())),
            })
        } else {
            let (label, args) = match tokens[0].strip_prefix('@') {
                Some(l) if !l.is_empty() => (Some(l.to_string()), &tokens[1..]),
                Some(_) => return Err(err("empty step label".into())),
                None => (None, &tokens[..]),
            };
            let args: Vec<String> = args.iter().map(|s| s.to_string()).collect();
            let args = match args.first().map(String::as_str) {
                Some("survfuse") => args[1..].to_vec(),
                Some(_) => args,
                None => return Err(err("label without a command".into())),
            };
            StepKind::Invoke { label, args }
        };
        steps.push(Step {
            line,
            text: trimmed.to_string(),
            kind,
        });
    }
    Ok(steps)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub line: usize,
    pub text: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct ReproReport {
    pub outcomes: Vec<Outcome>,
    pub values: BTreeMap<String, f64>,
    /// Set when an invocation failed and the run stopped.
    pub aborted: Option<String>,
}

impl ReproReport {
    pub fn passed(&self) -> bool {
        self.aborted.is_none() && self.outcomes.iter().all(|o| o.passed)
    }

    pub fn outcome_for(&self, needle: &str) -> Option<&Outcome> {
        self.outcomes.iter().find(|o| o.text.contains(needle))
    }
}

/// Numeric `key=value` tokens of command output.
pub fn scrape_values(output: &str) -> Vec<(String, f64)> {
    output
        .split_whitespace()
        .filter_map(|tok| {
            let (k, v) = tok.split_once('=')?;
            Some((k.to_string(), v.parse::<f64>().ok()?))
        })
        .collect()
}

/// Directories substituted into manifest arguments.
#[derive(Clone, Debug)]
pub struct Dirs {
    pub work: PathBuf,
    pub here: PathBuf,
}

impl Dirs {
    fn expand(&self, s: &str) -> String {
        s.replace("$WORK", &self.work.to_string_lossy())
            .replace("$HERE", &self.here.to_string_lossy())
    }

    fn resolve(&self, s: &str) -> PathBuf {
        let p = PathBuf::from(self.expand(s));
        if p.is_absolute() {
            p
        } else {
            self.work.join(p)
        }
    }
}

fn check(a: &Assertion, values: &BTreeMap<String, f64>, dirs: &Dirs) -> (bool, String) {
    match a {
        Assertion::Exists(p) => {
            let path = dirs.resolve(p);
            let ok = path.is_file();
            (ok, format!("{} {}", path.display(), if ok { "exists" } else { "missing" }))
        }
        Assertion::Same(a, b) => {
            let (pa, pb) = (dirs.resolve(a), dirs.resolve(b));
            match (std::fs::read(&pa), std::fs::read(&pb)) {
                (Ok(x), Ok(y)) if x == y => (true, format!("{} bytes identical", x.len())),
                (Ok(x), Ok(y)) => {
                    let at = x.iter().zip(&y).position(|(u, v)| u != v).unwrap_or(x.len().min(y.len()));
                    (false, format!("files differ at byte {at} (sizes {} and {})", x.len(), y.len()))
                }
                (Err(e), _) => (false, format!("{}: {e}", pa.display())),
                (_, Err(e)) => (false, format!("{}: {e}", pb.display())),
            }
        }
        Assertion::Compare { key, op, rhs } => {
            let Some(&observed) = values.get(key) else {
                return (false, format!("no value recorded for {key}"));
            };
            let expected = match &rhs.key {
                None => rhs.offset,
                Some(k) => match values.get(k) {
                    Some(v) => v + rhs.offset,
                    None => return (false, format!("no value recorded for {k}")),
                },
            };
            let ok = op.holds(observed, expected);
            (ok, format!("observed {observed}, expected {} {expected}", op.symbol()))
        }
    }
}

/// Runs `steps` in order. Invocations go through `invoke`,
/// which receives the argument list and a sink for the command's output.
pub fn run_steps<F>(steps: &[Step], dirs: &Dirs, out: &mut dyn Write, mut invoke: F) -> std::io::Result<ReproReport>
where
    F: FnMut(&[String], &mut Vec<u8>) -> anyhow::Result<()>,
{
    let mut report = ReproReport::default();
    for step in steps {
        match &step.kind {
            StepKind::Invoke { label, args } => {
                let args: Vec<String> = args.iter().map(|a| dirs.expand(a)).collect();
                writeln!(out, "== line {}: {}", step.line, args.join(" "))?;
                let mut captured = Vec::new();
                let start = Instant::now();
                let result = invoke(&args, &mut captured);
                let elapsed = start.elapsed().as_secs_f64();
                let text = String::from_utf8_lossy(&captured);
                for l in text.lines() {
                    writeln!(out, "   {l}")?;
                }
                if let Err(e) = result {
                    let msg = format!("line {}: command failed: {e:#}", step.line);
                    writeln!(out, "FAIL {msg}")?;
                    report.aborted = Some(msg);
                    return Ok(report);
                }
                let mut pairs = scrape_values(&text);
                pairs.push(("elapsed_seconds".into(), elapsed));
                writeln!(out, "   elapsed_seconds={elapsed:.3}")?;
                for (k, v) in pairs {
                    if let Some(l) = label {
                        report.values.insert(format!("{l}.{k}"), v);
                    }
                    report.values.insert(k, v);
                }
            }
            StepKind::Assert(a) => {
                let (passed, detail) = check(a, &report.values, dirs);
                writeln!(
                    out,
                    "{} line {}: {} ({detail})",
                    if passed { "PASS" } else { "FAIL" },
                    step.line,
                    step.text
                )?;
                report.outcomes.push(Outcome {
                    line: step.line,
                    text: step.text.clone(),
                    passed,
                    detail,
                });
            }
        }
    }
    let failed = report.outcomes.iter().filter(|o| !o.passed).count();
    writeln!(
        out,
        "repro: {} assertions, {} failed",
        report.outcomes.len(),
        failed
    )?;
    Ok(report)
}
