//! Built-in verification against independent reference computations:
//! finite-difference gradients of every trainable path under the Cox loss,
//! brute-force survival statistics, and a plain-loop state-space recurrence.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use survfuse_core::adapters::{mamba_forward, MambaAdapterParams, Pooling, StateReadout, HEAD_CLAMP};
use survfuse_core::data::{EmbeddingBundle, PatientRecord};
use survfuse_core::encoders::TokenSequence;
use survfuse_core::evaluation::concordance_index;
use survfuse_core::gradcheck::grad_check;
use survfuse_core::params::{Bound, ParamStore};
use survfuse_core::survival::{
    breslow_baseline, cox_ranking_loss, cox_ranking_loss_tape, kaplan_meier, stratify_tertiles, RiskStratum,
};
use survfuse_core::training::Model;
use survfuse_core::{AdapterKind, Error, Tape, Tensor, TrainConfig, Var};

pub const GRAD_SEEDS: usize = 20;
pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const ORACLE_INSTANCES: usize = 1000;
pub const RECURRENCE_DRAWS: usize = 100;

#[derive(Clone, Debug)]
pub struct GradSuite {
    /// Worst relative error per adapter kind, over the full model.
    pub max_error: Vec<(AdapterKind, f64)>,
    pub checked_per_kind: usize,
    /// Draws skipped because a relu input sat within 1e-3 of its kink.
    pub skipped: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct OracleSuite {
    /// Operation name, largest deviation from the reference, and count of
    /// structural mismatches (differing error cases, lengths or labels).
    pub results: Vec<(&'static str, f64, usize)>,
}

#[derive(Clone, Debug)]
pub struct RecurrenceSuite {
    pub max_abs_diff: f64,
    pub prefix_sums_exact: bool,
}

fn uniform(r: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-scale..scale)).collect()
}

fn scramble(store: &mut ParamStore, r: &mut ChaCha8Rng, scale: f64) {
    for p in store.params_mut() {
        if p.trainable {
            for v in p.value.data_mut() {
                *v = r.random_range(-scale..scale);
            }
        }
    }
}

/// Encoders, adapter and head of a small model, composed with the Cox loss
/// over a four-patient batch, against central differences.
pub fn gradient_suite(seeds: usize) -> survfuse_core::Result<GradSuite> {
    let start = Instant::now();
    let (d_rad, d_path) = (4, 5);
    let times = [3.0, 1.0, 4.0, 1.5];
    let events = [true, true, false, true];
    let mut max_error = Vec::new();
    let mut skipped = 0;
    for kind in AdapterKind::ALL {
        let cfg = TrainConfig {
            adapter_kind: kind,
            d_joint: 4,
            d_hidden: 5,
            d_h: 4,
            d_y: 4,
            ..TrainConfig::default()
        };
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        let mut draw = 0u64;
        while checked < seeds {
            draw += 1;
            let mut r = ChaCha8Rng::seed_from_u64(draw);
            let mut model = Model::new(&TrainConfig { seed: draw, ..cfg.clone() }, d_rad, d_path)?;
            scramble(&mut model.store, &mut r, 0.8);
            let records = (0..4)
                .map(|i| {
                    let b = EmbeddingBundle::new([
                        uniform(&mut r, d_rad, 1.0),
                        uniform(&mut r, d_rad, 1.0),
                        uniform(&mut r, d_rad, 1.0),
                        uniform(&mut r, d_rad, 1.0),
                        uniform(&mut r, d_path, 1.0),
                    ]);
                    PatientRecord::new(format!("g{i}"), b, times[i], events[i], None)
                })
                .collect::<survfuse_core::Result<Vec<_>>>()?;
            let refs: Vec<&PatientRecord> = records.iter().collect();
            let params: Vec<Tensor> = model.store.params().iter().map(|p| p.value.clone()).collect();
            let f = |tape: &mut Tape, vars: &[Var]| {
                let bound = Bound::from_vars(vars.to_vec());
                let mut risks = Vec::with_capacity(refs.len());
                for rec in &refs {
                    let tokens = model.encoder.encode_on_tape(tape, &bound, &rec.bundle)?;
                    risks.push(model.adapter.risk_on_tape(tape, &bound, &model.store, tokens)?);
                }
                let row = tape.concat(&risks, survfuse_core::tape::Axis::Cols)?;
                cox_ranking_loss_tape(tape, row, &times, &events)
            };
            let report = grad_check(f, &params, 1e-5, GRAD_TOLERANCE)?;
            if report.relu_margin < 1e-3 {
                skipped += 1;
                continue;
            }
            worst = worst.max(report.max_error);
            checked += 1;
        }
        max_error.push((kind, worst));
    }
    Ok(GradSuite {
        max_error,
        checked_per_kind: seeds,
        skipped,
        seconds: start.elapsed().as_secs_f64(),
    })
}

struct Instance {
    risks: Vec<f64>,
    times: Vec<f64>,
    events: Vec<bool>,
}

/// Size 1..=12, with tied times and tied risks in a share of draws.
fn instance(r: &mut ChaCha8Rng) -> Instance {
    let n = r.random_range(1..=12);
    let tied_times = r.random_bool(0.5);
    let tied_risks = r.random_bool(0.3);
    let times = (0..n)
        .map(|_| {
            if tied_times {
                r.random_range(1..=5) as f64
            } else {
                r.random_range(0.1..100.0)
            }
        })
        .collect();
    let risks = (0..n)
        .map(|_| {
            if tied_risks {
                r.random_range(-2..=2) as f64 * 0.5
            } else {
                r.random_range(-3.0..3.0)
            }
        })
        .collect();
    let p_event = r.random_range(0.0..1.0);
    let events = (0..n).map(|_| r.random_bool(p_event)).collect();
    Instance { risks, times, events }
}

fn brute_cox(x: &Instance) -> f64 {
    let n = x.times.len();
    let mut loss = 0.0;
    for i in (0..n).filter(|&i| x.events[i]) {
        let denom: f64 = (0..n)
            .filter(|&j| x.times[j] >= x.times[i])
            .map(|j| x.risks[j].exp())
            .sum();
        loss -= x.risks[i] - denom.ln();
    }
    loss
}

fn brute_c_index(x: &Instance) -> Option<f64> {
    let n = x.times.len();
    let (mut pairs, mut score) = (0u64, 0.0);
    for i in 0..n {
        for j in 0..n {
            if x.events[i] && x.times[i] < x.times[j] {
                pairs += 1;
                score += match x.risks[i].partial_cmp(&x.risks[j]) {
                    Some(std::cmp::Ordering::Greater) => 1.0,
                    Some(std::cmp::Ordering::Equal) => 0.5,
                    _ => 0.0,
                };
            }
        }
    }
    (pairs > 0).then(|| score / pairs as f64)
}

fn brute_km(x: &Instance, t: f64) -> f64 {
    let n = x.times.len();
    let mut deaths: Vec<f64> = (0..n)
        .filter(|&i| x.events[i] && x.times[i] <= t)
        .map(|i| x.times[i])
        .collect();
    deaths.sort_by(f64::total_cmp);
    deaths.dedup();
    deaths
        .iter()
        .map(|&u| {
            let d = (0..n).filter(|&i| x.events[i] && x.times[i] == u).count() as f64;
            let at_risk = (0..n).filter(|&i| x.times[i] >= u).count() as f64;
            1.0 - d / at_risk
        })
        .product()
}

fn brute_breslow(x: &Instance) -> Vec<(f64, f64)> {
    let n = x.times.len();
    let mut deaths: Vec<f64> = (0..n).filter(|&i| x.events[i]).map(|i| x.times[i]).collect();
    deaths.sort_by(f64::total_cmp);
    deaths.dedup();
    let mut h = 0.0;
    deaths
        .into_iter()
        .map(|t| {
            let d = (0..n).filter(|&i| x.events[i] && x.times[i] == t).count() as f64;
            let denom: f64 = (0..n).filter(|&j| x.times[j] >= t).map(|j| x.risks[j].exp()).sum();
            h += d / denom;
            (t, h)
        })
        .collect()
}

fn brute_tertiles(risks: &[f64]) -> Vec<RiskStratum> {
    let mut sorted = risks.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cut = |p: f64| {
        let pos = p * (sorted.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    };
    let (a, b) = (cut(0.33), cut(0.66));
    risks
        .iter()
        .map(|&r| {
            if r <= a {
                RiskStratum::Low
            } else if r <= b {
                RiskStratum::Mid
            } else {
                RiskStratum::High
            }
        })
        .collect()
}

/// Each statistic against its brute-force definition on `instances` random
/// inputs (tertiles only on inputs with at least 3 subjects).
pub fn oracle_suite(instances: usize, seed: u64) -> OracleSuite {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut cox = (0.0f64, 0usize);
    let mut cindex = (0.0f64, 0usize);
    let mut km = (0.0f64, 0usize);
    let mut breslow = (0.0f64, 0usize);
    let mut tertiles = (0.0f64, 0usize);
    let mut tertile_done = 0;
    while tertile_done < instances {
        let x = instance(&mut r);
        if x.risks.len() >= 3 {
            let ok = stratify_tertiles(&x.risks).ok() == Some(brute_tertiles(&x.risks));
            tertiles.1 += usize::from(!ok);
            tertile_done += 1;
        }
    }
    for _ in 0..instances {
        let x = instance(&mut r);

        match cox_ranking_loss(&x.risks, &x.times, &x.events) {
            Ok(v) => cox.0 = cox.0.max((v - brute_cox(&x)).abs()),
            Err(_) => cox.1 += 1,
        }

        match (concordance_index(&x.risks, &x.times, &x.events), brute_c_index(&x)) {
            (Ok(m), Some(c)) => cindex.0 = cindex.0.max((m.c_index - c).abs()),
            (Err(Error::NoComparablePairs), None) => {}
            _ => cindex.1 += 1,
        }

        match kaplan_meier(&x.times, &x.events) {
            Ok(curve) => {
                let mut probes = x.times.clone();
                probes.extend(x.times.iter().map(|t| t * 0.999));
                probes.push(1e9);
                for t in probes {
                    km.0 = km.0.max((curve.value_at(t) - brute_km(&x, t)).abs());
                }
            }
            Err(_) => km.1 += 1,
        }

        let expected = brute_breslow(&x);
        match breslow_baseline(&x.risks, &x.times, &x.events) {
            Ok(b) if b.event_times().len() == expected.len() => {
                for (k, (t, h)) in expected.iter().enumerate() {
                    if b.event_times()[k] != *t {
                        breslow.1 += 1;
                    }
                    breslow.0 = breslow.0.max((b.cumulative()[k] - h).abs());
                }
            }
            Err(Error::NoEvents(_)) if expected.is_empty() => {}
            _ => breslow.1 += 1,
        }
    }
    OracleSuite {
        results: vec![
            ("cox_ranking_loss", cox.0, cox.1),
            ("concordance_index", cindex.0, cindex.1),
            ("kaplan_meier", km.0, km.1),
            ("breslow_baseline", breslow.0, breslow.1),
            ("stratify_tertiles", tertiles.0, tertiles.1),
        ],
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn vec_matmul(x: &[f64], w: &Tensor) -> Vec<f64> {
    let cols = w.dims()[1];
    (0..cols)
        .map(|j| x.iter().enumerate().map(|(k, xk)| xk * w.get(k, j)).sum())
        .collect()
}

/// The five-step scan written out with plain loops.
fn reference_scan(t: &Tensor, p: &MambaAdapterParams, store: &ParamStore) -> (Vec<Vec<f64>>, f64) {
    let a: Vec<f64> = store
        .get(p.a_log)
        .data()
        .iter()
        .map(|x| (-(x.clamp(-40.0, 40.0)).exp()).exp())
        .collect();
    let d = t.dims()[1];
    let mut h = vec![0.0; a.len()];
    let mut ys = Vec::new();
    for n in 0..t.dims()[0] {
        let tn = &t.data()[n * d..(n + 1) * d];
        let gated: Vec<f64> = vec_matmul(tn, store.get(p.v_b))
            .iter()
            .zip(tn)
            .map(|(g, x)| sigmoid(g + p.gate_bias) * x)
            .collect();
        let u = vec_matmul(&gated, store.get(p.g_b));
        let next: Vec<f64> = h.iter().zip(&a).zip(&u).map(|((h, a), u)| a * h + u).collect();
        let read = match p.readout {
            StateReadout::PostUpdate => &next,
            StateReadout::PreUpdate => &h,
        };
        let gh: Vec<f64> = vec_matmul(tn, store.get(p.v_c))
            .iter()
            .zip(read)
            .map(|(g, x)| sigmoid(g + p.gate_bias) * x)
            .collect();
        ys.push(vec_matmul(&gh, store.get(p.g_c)));
        h = next;
    }
    let pooled = match p.pooling {
        Pooling::Last => ys.last().unwrap().clone(),
        Pooling::Mean => (0..ys[0].len())
            .map(|j| ys.iter().map(|y| y[j]).sum::<f64>() / ys.len() as f64)
            .collect(),
    };
    let w = store.get(p.head.weight).data();
    let z = store.get(p.head.bias).data()[0] + pooled.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
    (ys, 3.0 * z.clamp(-HEAD_CLAMP, HEAD_CLAMP).tanh())
}

/// Scan outputs against [`reference_scan`] on random parameters, plus the
/// saturated-gate identity configuration that must give exact prefix sums.
pub fn recurrence_suite(draws: usize) -> survfuse_core::Result<RecurrenceSuite> {
    let mut worst: f64 = 0.0;
    for seed in 0..draws as u64 {
        let mut r = ChaCha8Rng::seed_from_u64(10_000 + seed);
        let mut store = ParamStore::new();
        let gate_bias = r.random_range(-1.0..1.0);
        let mut p = MambaAdapterParams::new(&mut store, &mut r, 4, 3, 2, gate_bias);
        scramble(&mut store, &mut r, 1.0);
        for v in store.get_mut(p.a_log).data_mut() {
            *v = r.random_range(-3.0..1.0);
        }
        if seed % 2 == 1 {
            p.readout = StateReadout::PreUpdate;
            p.pooling = Pooling::Mean;
        }
        let t = Tensor::new(&[5, 4], uniform(&mut r, 20, 1.5))?;
        let (y, risk) = mamba_forward(&TokenSequence::new(t.clone())?, &p, &store)?;
        let (ys, risk_ref) = reference_scan(&t, &p, &store);
        for (n, yr) in ys.iter().enumerate() {
            for (j, v) in yr.iter().enumerate() {
                worst = worst.max((y.get(n, j) - v).abs());
            }
        }
        worst = worst.max((risk - risk_ref).abs());
    }

    let d = 6;
    let mut store = ParamStore::new();
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let p = MambaAdapterParams::new(&mut store, &mut r, d, d, d, 40.0);
    store.get_mut(p.a_log).data_mut().fill(-1e9);
    store.get_mut(p.v_b).data_mut().fill(0.0);
    store.get_mut(p.v_c).data_mut().fill(0.0);
    *store.get_mut(p.g_b) = Tensor::identity(d);
    *store.get_mut(p.g_c) = Tensor::identity(d);
    let mut exact = true;
    for _ in 0..20 {
        let t = Tensor::new(&[5, d], uniform(&mut r, 5 * d, 1.5))?;
        let (y, _) = mamba_forward(&TokenSequence::new(t.clone())?, &p, &store)?;
        let mut acc = vec![0.0; d];
        for n in 0..5 {
            for (j, a) in acc.iter_mut().enumerate() {
                *a += t.get(n, j);
                exact &= y.get(n, j) == *a;
            }
        }
    }
    Ok(RecurrenceSuite {
        max_abs_diff: worst,
        prefix_sums_exact: exact,
    })
}
