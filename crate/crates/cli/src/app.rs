//! Subcommands and the process exit-code contract.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;
use survfuse_core::data::{split_cohort, Cohort, PatientRecord, Split};
use survfuse_core::survival::{kaplan_meier, stratify_median, stratify_tertiles, RiskStratum, StepCurve};
use survfuse_core::synthetic::{generate_cohort, oracle_cindex, SyntheticSpec};
use survfuse_core::training::{evaluate, predict, train, Evaluation};
use survfuse_core::{concordance_index, AdapterKind, MetricReport};

use crate::checkpoint::{self, SavedRun};
use crate::cohort_io::{read_cohort, read_truth, truth_path, write_cohort, write_truth};
use crate::config::{ConfigError, RunConfig};
use crate::curves::{curve_csv, render_svg};
use crate::{repro, selfcheck};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Default latent weights; entries past the fifth are zero.
pub const BASE_WEIGHTS: [f64; 5] = [1.0, -0.8, 0.6, -0.4, 0.3];

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Debug, thiserror::Error)]
#[error("reproduction failed: {0}")]
pub struct ReproFailed(pub String);

#[derive(Parser, Debug)]
#[command(name = "survfuse", version, about = "Multimodal embedding survival models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic proportional-hazards cohort and its true risks.
    Simulate(SimulateArgs),
    /// Train encoders and adapter, write checkpoint.bin.
    Train(TrainArgs),
    /// Concordance and risk table for one split.
    Eval(EvalArgs),
    /// Survival probabilities at fixed horizons.
    Predict(PredictArgs),
    /// Kaplan-Meier curves per risk stratum.
    Km(KmArgs),
    /// Adapter x cohort x seed grid.
    Ablate(AblateArgs),
    /// Gradient, oracle and recurrence self-verification.
    Check(CheckArgs),
    /// Run a reproduction manifest.
    Repro(ReproArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value_t = 300)]
    n: usize,
    #[arg(long, default_value_t = 8)]
    latent_dim: usize,
    #[arg(long, default_value_t = 16)]
    d_rad: usize,
    #[arg(long, default_value_t = 24)]
    d_path: usize,
    /// Comma-separated latent weights (default 1,-0.8,0.6,-0.4,0.3,0,...).
    #[arg(long)]
    weights: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    weight_scale: f64,
    #[arg(long, default_value_t = 1.0 / 365.0)]
    baseline_rate: f64,
    #[arg(long, default_value_t = 0.0008)]
    censor_rate: f64,
    #[arg(long)]
    no_censoring: bool,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Training flags; each overrides the same-named key of `--config`.
#[derive(Args, Debug, Default)]
struct TrainFlags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    adapter: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    split_seed: Option<String>,
    #[arg(long)]
    d_joint: Option<String>,
    #[arg(long)]
    d_hidden: Option<String>,
    #[arg(long)]
    d_h: Option<String>,
    #[arg(long)]
    d_y: Option<String>,
    #[arg(long)]
    gate_bias: Option<String>,
    #[arg(long)]
    readout: Option<String>,
    #[arg(long)]
    pooling: Option<String>,
    #[arg(long)]
    beta1: Option<String>,
    #[arg(long)]
    beta2: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    full_risk_set: bool,
    #[arg(long)]
    train_fraction: Option<String>,
    #[arg(long)]
    val_fraction: Option<String>,
    #[arg(long)]
    test_fraction: Option<String>,
}

impl TrainFlags {
    fn resolve(&self) -> Result<RunConfig> {
        let mut run = RunConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            run.apply_text(&text)?;
        }
        let pairs = [
            ("adapter_kind", &self.adapter),
            ("epochs", &self.epochs),
            ("learning_rate", &self.lr),
            ("batch_size", &self.batch),
            ("seed", &self.seed),
            ("split_seed", &self.split_seed),
            ("d_joint", &self.d_joint),
            ("d_hidden", &self.d_hidden),
            ("d_h", &self.d_h),
            ("d_y", &self.d_y),
            ("gate_bias", &self.gate_bias),
            ("readout", &self.readout),
            ("pooling", &self.pooling),
            ("beta1", &self.beta1),
            ("beta2", &self.beta2),
            ("epsilon", &self.epsilon),
            ("train_fraction", &self.train_fraction),
            ("val_fraction", &self.val_fraction),
            ("test_fraction", &self.test_fraction),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                run.set(key, v)?;
            }
        }
        if self.full_risk_set {
            run.train.full_risk_set = true;
        }
        run.train.validate()?;
        Ok(run)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Additional runs with seeds seed+1, seed+2, ...; reports mean±std
    /// test c-index. The checkpoint is always the first run.
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// train, val, test or all.
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Comma-separated horizons in days.
    #[arg(long, default_value = "180,365,730")]
    horizons: String,
    #[arg(long, default_value = "all")]
    split: String,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct KmArgs {
    #[arg(long)]
    cohort: PathBuf,
    /// Risk table written by `eval`.
    #[arg(long)]
    risks: PathBuf,
    /// tertile or median.
    #[arg(long, default_value = "tertile")]
    split: String,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long, required = true, num_args = 1..)]
    cohort: Vec<PathBuf>,
    #[arg(long, default_value = "mlp,attention,mamba")]
    adapters: String,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[arg(long, default_value_t = selfcheck::GRAD_SEEDS)]
    grad_seeds: usize,
    #[arg(long, default_value_t = selfcheck::ORACLE_INSTANCES)]
    instances: usize,
    #[arg(long, default_value_t = selfcheck::RECURRENCE_DRAWS)]
    draws: usize,
}

#[derive(Args, Debug)]
struct ReproArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory substituted for `$WORK`; created if missing.
    #[arg(long)]
    work_dir: PathBuf,
}

/// Maps an error chain to the exit-code contract.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        // Damaged input files are runtime failures whatever they contain.
        if cause.is::<checkpoint::CheckpointError>() || cause.is::<crate::cohort_io::FormatError>() {
            return EXIT_RUNTIME;
        }
        if cause.is::<UsageError>() || cause.is::<ConfigError>() || cause.is::<clap::Error>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<survfuse_core::Error>() {
            use survfuse_core::Error as E;
            if matches!(e, E::InvalidSpec(_) | E::InvalidConfig(_) | E::InvalidFractions(_)) {
                return EXIT_USAGE;
            }
        }
    }
    EXIT_RUNTIME
}

/// Parses `args` (without the program name) and runs the command, writing
/// its report to `out`.
pub fn run(args: &[String], out: &mut dyn Write) -> Result<()> {
    let cli = match Cli::try_parse_from(std::iter::once("survfuse".to_string()).chain(args.iter().cloned())) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            write!(out, "{e}")?;
            return Ok(());
        }
        Err(e) => return Err(e.into()),
    };
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Predict(a) => cmd_predict(a, out),
        Command::Km(a) => cmd_km(a, out),
        Command::Ablate(a) => cmd_ablate(a, out),
        Command::Check(a) => cmd_check(a, out),
        Command::Repro(a) => cmd_repro(a, out),
    }
}

fn parse_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| UsageError(format!("{what}: cannot parse {s:?}")).into())
        })
        .collect()
}

fn load(path: &Path) -> Result<Cohort> {
    let loaded = read_cohort(path)?;
    for w in &loaded.warnings {
        log::warn!("{w}");
    }
    Ok(loaded.cohort)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn parse_split(s: &str) -> Result<Option<Split>> {
    if s == "all" {
        return Ok(None);
    }
    s.parse::<Split>().map(Some).map_err(|e| UsageError(e).into())
}

fn split_name(s: Option<Split>) -> &'static str {
    s.map_or("all", Split::name)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn opt(v: Option<f64>) -> String {
    v.map_or("none".into(), |x| x.to_string())
}

fn cmd_simulate(a: SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let weights = match &a.weights {
        Some(w) => parse_list(w, "--weights")?,
        None => (0..a.latent_dim)
            .map(|i| BASE_WEIGHTS.get(i).copied().unwrap_or(0.0))
            .collect(),
    };
    let spec = SyntheticSpec {
        n_patients: a.n,
        latent_dim: a.latent_dim,
        d_rad: a.d_rad,
        d_path: a.d_path,
        true_weights: weights.iter().map(|w| w * a.weight_scale).collect(),
        baseline_rate: a.baseline_rate,
        censor_rate: (!a.no_censoring).then_some(a.censor_rate),
        noise_sigma: a.noise,
        seed: a.seed,
    };
    let (cohort, risks) = generate_cohort(&spec)?;
    write_cohort(&a.out, &cohort)?;
    let truth = truth_path(&a.out);
    write_truth(&truth, &cohort, &risks)?;
    let censored = cohort.events().iter().filter(|&&e| !e).count();
    writeln!(out, "cohort={}", a.out.display())?;
    writeln!(out, "truth={}", truth.display())?;
    writeln!(out, "n={}", cohort.len())?;
    writeln!(out, "censored_fraction={}", censored as f64 / cohort.len() as f64)?;
    writeln!(out, "oracle_c_index={}", oracle_cindex(&cohort, &risks)?)?;
    Ok(())
}

fn split(cohort: &Cohort, run: &RunConfig) -> Result<Cohort> {
    Ok(split_cohort(cohort, run.fractions, run.split_seed)?)
}

/// Oracle c-index on the rows of `eval`, when the cohort has a truth sidecar.
fn oracle_on(cohort_path: &Path, cohort: &Cohort, rows: &[usize]) -> Result<Option<f64>> {
    let path = truth_path(cohort_path);
    if !path.is_file() {
        return Ok(None);
    }
    let truth = read_truth(&path, cohort)?;
    let risks: Vec<f64> = rows.iter().map(|&i| truth[i]).collect();
    let times: Vec<f64> = rows.iter().map(|&i| cohort.records()[i].survival_time).collect();
    let events: Vec<bool> = rows.iter().map(|&i| cohort.records()[i].event).collect();
    Ok(Some(concordance_index(&risks, &times, &events)?.c_index))
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    if a.repeats == 0 {
        bail!(UsageError("--repeats must be at least 1".into()));
    }
    let run = a.flags.resolve()?;
    let cohort = split(&load(&a.cohort)?, &run)?;
    create_dir(&a.out_dir)?;

    log::info!("training {} on {} records", run.train.adapter_kind, cohort.len());
    let start = Instant::now();
    let ck = train(&cohort, &run.train)?;
    let seconds = start.elapsed().as_secs_f64();
    for h in &ck.history {
        writeln!(
            out,
            "epoch={} train_loss={} val_c_index={}",
            h.epoch,
            h.train_loss,
            opt(h.val_c_index)
        )?;
    }
    writeln!(out, "train_seconds={seconds:.3}")?;
    let path = a.out_dir.join("checkpoint.bin");
    let saved = SavedRun {
        run: run.clone(),
        checkpoint: ck,
    };
    checkpoint::save(&path, &saved)?;
    writeln!(out, "checkpoint={}", path.display())?;

    if a.repeats > 1 {
        let seeds: Vec<u64> = (0..a.repeats as u64).map(|k| run.train.seed + k).collect();
        let scores = seeds
            .par_iter()
            .map(|&seed| {
                let mut cfg = run.train.clone();
                cfg.seed = seed;
                let ck = if seed == run.train.seed {
                    saved.checkpoint.clone()
                } else {
                    train(&cohort, &cfg)?
                };
                Ok(evaluate(&ck, &cohort, Some(Split::Test))?.report.c_index)
            })
            .collect::<Result<Vec<f64>>>()?;
        for (seed, c) in seeds.iter().zip(&scores) {
            writeln!(out, "repeat_seed={seed} test_c_index={c}")?;
        }
        let (m, s) = mean_std(&scores);
        writeln!(out, "test_c_index_mean={m}")?;
        writeln!(out, "test_c_index_std={s}")?;
        writeln!(out, "test_c_index: {m:.4}±{s:.4} over {} seeds", a.repeats)?;
    }
    Ok(())
}

fn metrics_json(split: Option<Split>, n: usize, r: &MetricReport, oracle: Option<f64>, risks: &[f64]) -> String {
    let (lo, hi) = risk_range(risks);
    let v = json!({
        "split": split_name(split),
        "n": n,
        "c_index": r.c_index,
        "c_index_censored_pairs": r.c_index_censored_pairs,
        "n_comparable_pairs": r.n_comparable_pairs,
        "n_tied_risk_pairs": r.n_tied_risk_pairs,
        "oracle_c_index": oracle,
        "risk_min": lo,
        "risk_max": hi,
    });
    let mut s = serde_json::to_string_pretty(&v).expect("json");
    s.push('\n');
    s
}

fn risk_range(risks: &[f64]) -> (f64, f64) {
    risks
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| (lo.min(r), hi.max(r)))
}

fn risks_csv(cohort: &Cohort, ev: &Evaluation) -> String {
    let mut s = String::from("id,split,risk,stratum,survival_days,event\n");
    for row in &ev.rows {
        let r = &cohort.records()[row.index];
        let sp = cohort.split().map_or("none", |sp| sp[row.index].name());
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.id,
            sp,
            row.risk,
            row.stratum.name(),
            r.survival_time,
            u8::from(r.event)
        )
        .unwrap();
    }
    s
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let which = parse_split(&a.split)?;
    let saved = checkpoint::load(&a.checkpoint)?;
    let cohort = split(&load(&a.cohort)?, &saved.run)?;
    let ev = evaluate(&saved.checkpoint, &cohort, which)?;
    let rows: Vec<usize> = ev.rows.iter().map(|r| r.index).collect();
    let oracle = oracle_on(&a.cohort, &cohort, &rows)?;
    let risks: Vec<f64> = ev.rows.iter().map(|r| r.risk).collect();
    let (lo, hi) = risk_range(&risks);

    create_dir(&a.out_dir)?;
    write_file(
        &a.out_dir.join("metrics.json"),
        metrics_json(which, rows.len(), &ev.report, oracle, &risks),
    )?;
    write_file(&a.out_dir.join("risks.csv"), risks_csv(&cohort, &ev))?;

    let r = &ev.report;
    writeln!(out, "split={}", split_name(which))?;
    writeln!(out, "n={}", rows.len())?;
    writeln!(out, "c_index={}", r.c_index)?;
    writeln!(out, "c_index_censored_pairs={}", opt(r.c_index_censored_pairs))?;
    writeln!(out, "n_comparable_pairs={}", r.n_comparable_pairs)?;
    writeln!(out, "n_tied_risk_pairs={}", r.n_tied_risk_pairs)?;
    if let Some(o) = oracle {
        writeln!(out, "oracle_c_index={o}")?;
    }
    writeln!(out, "risk_min={lo}")?;
    writeln!(out, "risk_max={hi}")?;
    Ok(())
}

fn cmd_predict(a: PredictArgs, out: &mut dyn Write) -> Result<()> {
    let horizons = parse_list(&a.horizons, "--horizons")?;
    let which = parse_split(&a.split)?;
    let saved = checkpoint::load(&a.checkpoint)?;
    let ck = &saved.checkpoint;
    let baseline = ck
        .baseline
        .as_ref()
        .context("checkpoint has no baseline hazard")?;
    let cohort = split(&load(&a.cohort)?, &saved.run)?;
    let indices: Vec<usize> = match which {
        Some(s) => cohort.indices(s)?,
        None => (0..cohort.len()).collect(),
    };
    let records: Vec<&PatientRecord> = indices.iter().map(|&i| &cohort.records()[i]).collect();
    let probs = predict(ck, &records, baseline, &horizons)?;
    let risks = ck.model.predict(&records)?;

    let mut s = String::from("id,risk");
    for h in &horizons {
        write!(s, ",s_{h}")?;
    }
    s.push('\n');
    for ((r, risk), p) in records.iter().zip(&risks).zip(&probs) {
        write!(s, "{},{risk}", r.id)?;
        for v in p {
            write!(s, ",{v}")?;
        }
        s.push('\n');
    }
    let mut b = String::from("time,value\n");
    for (t, h) in baseline.event_times().iter().zip(baseline.cumulative()) {
        writeln!(b, "{t},{h}")?;
    }
    create_dir(&a.out_dir)?;
    write_file(&a.out_dir.join("survival.csv"), s)?;
    write_file(&a.out_dir.join("baseline.csv"), b)?;
    writeln!(out, "rows={}", records.len())?;
    writeln!(out, "horizons={}", horizons.len())?;
    writeln!(out, "survival={}", a.out_dir.join("survival.csv").display())?;
    Ok(())
}

/// `(id, risk)` pairs from a risk table.
fn read_risks(path: &Path) -> Result<Vec<(String, f64)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name);
    let (Some(id_col), Some(risk_col)) = (col("id"), col("risk")) else {
        bail!("{}: header must contain id and risk columns", path.display());
    };
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || anyhow::anyhow!("{}:{}: malformed row", path.display(), i + 2);
            let risk = f.get(risk_col).ok_or_else(bad)?.parse().map_err(|_| bad())?;
            Ok((f.get(id_col).ok_or_else(bad)?.to_string(), risk))
        })
        .collect()
}

/// Fraction of event times at which `high` lies at or below `low`.
pub fn dominance(high: &StepCurve, low: &StepCurve, event_times: &[f64]) -> f64 {
    if event_times.is_empty() {
        return 1.0;
    }
    let ok = event_times
        .iter()
        .filter(|&&t| high.value_at(t) <= low.value_at(t))
        .count();
    ok as f64 / event_times.len() as f64
}

fn cmd_km(a: KmArgs, out: &mut dyn Write) -> Result<()> {
    let cohort = load(&a.cohort)?;
    let table = read_risks(&a.risks)?;
    let by_id: std::collections::HashMap<&str, &PatientRecord> =
        cohort.records().iter().map(|r| (r.id.as_str(), r)).collect();
    let records: Vec<&PatientRecord> = table
        .iter()
        .map(|(id, _)| {
            by_id
                .get(id.as_str())
                .copied()
                .with_context(|| format!("risk table id {id} not in cohort"))
        })
        .collect::<Result<_>>()?;
    let risks: Vec<f64> = table.iter().map(|(_, r)| *r).collect();
    let strata = match a.split.as_str() {
        "tertile" | "tertiles" => stratify_tertiles(&risks)?,
        "median" => stratify_median(&risks)?,
        other => bail!(UsageError(format!("--split must be tertile or median, got {other:?}"))),
    };

    create_dir(&a.out_dir)?;
    let mut curves = Vec::new();
    for g in [RiskStratum::Low, RiskStratum::Mid, RiskStratum::High] {
        let members: Vec<&PatientRecord> = records
            .iter()
            .zip(&strata)
            .filter(|(_, s)| **s == g)
            .map(|(r, _)| *r)
            .collect();
        if members.is_empty() {
            continue;
        }
        let times: Vec<f64> = members.iter().map(|r| r.survival_time).collect();
        let events: Vec<bool> = members.iter().map(|r| r.event).collect();
        let curve = kaplan_meier(&times, &events)?;
        write_file(&a.out_dir.join(format!("km_{}.csv", g.name())), curve_csv(&curve))?;
        writeln!(
            out,
            "stratum={} n={} events={}",
            g.name(),
            members.len(),
            events.iter().filter(|&&e| e).count()
        )?;
        curves.push((g.name().to_string(), curve));
    }
    write_file(&a.out_dir.join("km.svg"), render_svg(&curves))?;
    let find = |n: &str| curves.iter().find(|(k, _)| k == n).map(|(_, c)| c);
    if let (Some(high), Some(low)) = (find("high"), find("low")) {
        let event_times: Vec<f64> = records.iter().filter(|r| r.event).map(|r| r.survival_time).collect();
        writeln!(out, "high_below_low_fraction={}", dominance(high, low, &event_times))?;
    }
    Ok(())
}

struct Cell {
    cohort: usize,
    kind: AdapterKind,
    seed: u64,
}

struct CellResult {
    c_index: f64,
    censored: Option<f64>,
    risk_range: (f64, f64),
}

fn cmd_ablate(a: AblateArgs, out: &mut dyn Write) -> Result<()> {
    if a.repeats == 0 {
        bail!(UsageError("--repeats must be at least 1".into()));
    }
    let run = a.flags.resolve()?;
    let kinds = a
        .adapters
        .split(',')
        .map(|s| s.trim().parse::<AdapterKind>().map_err(|e| UsageError(e.to_string()).into()))
        .collect::<Result<Vec<_>>>()?;
    let mut cohorts = Vec::new();
    let mut names = Vec::new();
    for path in &a.cohort {
        cohorts.push(split(&load(path)?, &run)?);
        names.push(
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "cohort".into()),
        );
    }
    let mut cells = Vec::new();
    for c in 0..cohorts.len() {
        for &kind in &kinds {
            for k in 0..a.repeats as u64 {
                cells.push(Cell {
                    cohort: c,
                    kind,
                    seed: run.train.seed + k,
                });
            }
        }
    }
    create_dir(&a.out_dir)?;
    let results = cells
        .par_iter()
        .map(|cell| {
            let cfg = RunConfig {
                train: survfuse_core::TrainConfig {
                    seed: cell.seed,
                    ..run.with_adapter(cell.kind).train
                },
                ..run.clone()
            };
            let cohort = &cohorts[cell.cohort];
            let ck = train(cohort, &cfg.train)?;
            let ev = evaluate(&ck, cohort, Some(Split::Test))?;
            log::info!(
                "{} {} seed {}: c-index {:.4}",
                names[cell.cohort],
                cell.kind,
                cell.seed,
                ev.report.c_index
            );
            let risks: Vec<f64> = ev.rows.iter().map(|r| r.risk).collect();
            let dir = a
                .out_dir
                .join("cells")
                .join(format!("{}_{}_seed{}", names[cell.cohort], cell.kind, cell.seed));
            create_dir(&dir)?;
            write_file(
                &dir.join("metrics.json"),
                metrics_json(Some(Split::Test), risks.len(), &ev.report, None, &risks),
            )?;
            Ok(CellResult {
                c_index: ev.report.c_index,
                censored: ev.report.c_index_censored_pairs,
                risk_range: risk_range(&risks),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut csv = String::from("cohort,adapter,repeats,c_index_mean,c_index_std,censored_mean,censored_std,oracle_c_index\n");
    let mut table = format!(
        "{:<16} {:<10} {:>7} {:>17} {:>17} {:>8}\n",
        "cohort", "adapter", "repeats", "c_index", "censored", "oracle"
    );
    let mut keys = String::new();
    for (c, name) in names.iter().enumerate() {
        let test_rows = cohorts[c].indices(Split::Test)?;
        let oracle = oracle_on(&a.cohort[c], &cohorts[c], &test_rows)?;
        if let Some(o) = oracle {
            writeln!(keys, "{name}.oracle_c_index={o}")?;
        }
        for &kind in &kinds {
            let group: Vec<&CellResult> = cells
                .iter()
                .zip(&results)
                .filter(|(cell, _)| cell.cohort == c && cell.kind == kind)
                .map(|(_, r)| r)
                .collect();
            let (cm, cs) = mean_std(&group.iter().map(|r| r.c_index).collect::<Vec<_>>());
            let censored: Vec<f64> = group.iter().filter_map(|r| r.censored).collect();
            let (zm, zs) = if censored.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&censored);
                (Some(m), Some(s))
            };
            let o = oracle.map_or(String::new(), |o| o.to_string());
            writeln!(
                csv,
                "{name},{kind},{},{cm},{cs},{},{},{o}",
                group.len(),
                zm.map_or(String::new(), |v| v.to_string()),
                zs.map_or(String::new(), |v| v.to_string()),
            )?;
            let z = match (zm, zs) {
                (Some(m), Some(s)) => format!("{m:.4}±{s:.4}"),
                _ => "n/a".into(),
            };
            writeln!(
                table,
                "{:<16} {:<10} {:>7} {:>17} {:>17} {:>8}",
                name,
                kind.name(),
                group.len(),
                format!("{cm:.4}±{cs:.4}"),
                z,
                oracle.map_or("n/a".into(), |o| format!("{o:.4}"))
            )?;
            writeln!(keys, "{name}.{kind}.c_index_mean={cm}")?;
            writeln!(keys, "{name}.{kind}.c_index_std={cs}")?;
            if let Some(m) = zm {
                writeln!(keys, "{name}.{kind}.censored_mean={m}")?;
            }
        }
    }
    let (lo, hi) = results.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
        (lo.min(r.risk_range.0), hi.max(r.risk_range.1))
    });
    writeln!(keys, "risk_min={lo}")?;
    writeln!(keys, "risk_max={hi}")?;
    write_file(&a.out_dir.join("ablation.csv"), &csv)?;
    write_file(&a.out_dir.join("ablation.txt"), &table)?;
    write!(out, "{table}{keys}")?;
    Ok(())
}

fn cmd_check(a: CheckArgs, out: &mut dyn Write) -> Result<()> {
    let g = selfcheck::gradient_suite(a.grad_seeds)?;
    let worst = g.max_error.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    for (kind, e) in &g.max_error {
        writeln!(out, "grad_max_rel_error.{kind}={e}")?;
    }
    writeln!(out, "grad_max_rel_error={worst}")?;
    writeln!(out, "grad_seeds={}", g.checked_per_kind)?;
    writeln!(out, "grad_skipped_near_kink={}", g.skipped)?;
    writeln!(out, "grad_seconds={:.3}", g.seconds)?;

    let o = selfcheck::oracle_suite(a.instances, 1);
    let mut max_diff: f64 = 0.0;
    let mut mismatches = 0;
    for (name, d, m) in &o.results {
        writeln!(out, "oracle_max_abs_diff.{name}={d} oracle_mismatches.{name}={m}")?;
        max_diff = max_diff.max(*d);
        mismatches += m;
    }
    writeln!(out, "oracle_instances={}", a.instances)?;
    writeln!(out, "oracle_max_abs_diff={max_diff}")?;
    writeln!(out, "oracle_mismatches={mismatches}")?;

    let r = selfcheck::recurrence_suite(a.draws)?;
    writeln!(out, "recurrence_draws={}", a.draws)?;
    writeln!(out, "recurrence_max_abs_diff={}", r.max_abs_diff)?;
    writeln!(out, "prefix_sums_exact={}", u8::from(r.prefix_sums_exact))?;
    Ok(())
}

fn cmd_repro(a: ReproArgs, out: &mut dyn Write) -> Result<()> {
    let report = run_manifest(&a.manifest, &a.work_dir, out)?;
    if !report.passed() {
        let why = report.aborted.clone().unwrap_or_else(|| {
            let n = report.outcomes.iter().filter(|o| !o.passed).count();
            format!("{n} assertion(s) failed")
        });
        bail!(ReproFailed(why));
    }
    Ok(())
}

/// Parses and runs a manifest file, invoking commands in-process.
pub fn run_manifest(manifest: &Path, work: &Path, out: &mut dyn Write) -> Result<repro::ReproReport> {
    let text = fs::read_to_string(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let steps = repro::parse_manifest(&text).map_err(|e| UsageError(e.to_string()))?;
    create_dir(work)?;
    let dirs = repro::Dirs {
        work: work.to_path_buf(),
        here: manifest
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."))
            .to_path_buf(),
    };
    let report = repro::run_steps(&steps, &dirs, out, |args, sink| {
        let mut buf: Vec<u8> = Vec::new();
        let r = run(args, &mut buf);
        sink.extend_from_slice(&buf);
        r
    })?;
    Ok(report)
}
