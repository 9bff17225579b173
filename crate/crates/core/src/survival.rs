//! Cox partial likelihood, Breslow baseline hazard, Kaplan–Meier curves and
//! risk stratification.
//!
//! All functions take parallel slices `risks`, `times`, `events`; an event
//! flag of `true` means the death was observed. Tied times share a risk set:
//! subject `i`'s risk set is every `j` with `times[j] >= times[i]`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tape::{Axis, Tape, Var};

fn check_lengths(what: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch {
            what,
            left: a,
            right: b,
        });
    }
    Ok(())
}

/// Indices sorted by time, latest first.
fn by_time_desc(times: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]).then(a.cmp(&b)));
    order
}

/// Negative log Cox partial likelihood, summed over observed events.
///
/// Returns 0 when no event is observed.
pub fn cox_ranking_loss(risks: &[f64], times: &[f64], events: &[bool]) -> Result<f64> {
    check_lengths("cox loss risks/times", risks.len(), times.len())?;
    check_lengths("cox loss risks/events", risks.len(), events.len())?;
    let order = by_time_desc(times);
    let mut loss = 0.0;
    // Running log-sum-exp of the risk set, grown from the latest time down.
    let mut lse = f64::NEG_INFINITY;
    let mut k = 0;
    while k < order.len() {
        let t = times[order[k]];
        let mut end = k;
        while end < order.len() && times[order[end]] == t {
            lse = log_add_exp(lse, risks[order[end]]);
            end += 1;
        }
        for &i in &order[k..end] {
            if events[i] {
                loss += lse - risks[i];
            }
        }
        k = end;
    }
    Ok(loss)
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let m = a.max(b);
    m + libm::log(libm::exp(a - m) + libm::exp(b - m))
}

/// The Cox loss recorded on a tape, differentiable in `risks` (a `1 x n`
/// row). Each event contributes `logsumexp(risk set) - risk`.
pub fn cox_ranking_loss_tape(
    tape: &mut Tape,
    risks: Var,
    times: &[f64],
    events: &[bool],
) -> Result<Var> {
    check_lengths("cox loss risks/times", tape.value(risks).len(), times.len())?;
    check_lengths("cox loss risks/events", times.len(), events.len())?;
    let mut terms = Vec::new();
    for i in 0..times.len() {
        if !events[i] {
            continue;
        }
        let set: Vec<usize> = (0..times.len()).filter(|&j| times[j] >= times[i]).collect();
        let members = tape.gather(risks, &set)?;
        let lse = tape.logsumexp(members)?;
        let own = tape.gather(risks, &[i])?;
        terms.push(tape.sub(lse, own)?);
    }
    if terms.is_empty() {
        let s = tape.sum(risks);
        return Ok(tape.scale(s, 0.0));
    }
    let all = tape.concat(&terms, Axis::Cols)?;
    Ok(tape.sum(all))
}

/// Cumulative baseline hazard as a right-continuous step function.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineHazard {
    event_times: Vec<f64>,
    cumulative: Vec<f64>,
}

impl BaselineHazard {
    pub fn new(event_times: Vec<f64>, cumulative: Vec<f64>) -> Result<Self> {
        check_lengths("baseline hazard", event_times.len(), cumulative.len())?;
        let increasing = event_times.windows(2).all(|w| w[0] < w[1]);
        let nondecreasing = cumulative.windows(2).all(|w| w[0] <= w[1]);
        let valid = event_times.iter().all(|t| t.is_finite() && *t > 0.0)
            && cumulative.iter().all(|h| h.is_finite() && *h >= 0.0);
        if !(increasing && nondecreasing && valid) {
            return Err(Error::InvalidRecord {
                id: "baseline hazard".into(),
                reason: "times must increase and cumulative hazard must be nondecreasing".into(),
            });
        }
        Ok(Self {
            event_times,
            cumulative,
        })
    }

    pub fn event_times(&self) -> &[f64] {
        &self.event_times
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    /// `H_0(t)`; zero before the first event time.
    pub fn at(&self, t: f64) -> f64 {
        let k = self.event_times.partition_point(|&e| e <= t);
        if k == 0 {
            0.0
        } else {
            self.cumulative[k - 1]
        }
    }
}

/// Breslow estimator: at each distinct event time the hazard jumps by
/// `deaths / Σ_{at risk} exp(risk)`.
pub fn breslow_baseline(risks: &[f64], times: &[f64], events: &[bool]) -> Result<BaselineHazard> {
    check_lengths("breslow risks/times", risks.len(), times.len())?;
    check_lengths("breslow risks/events", risks.len(), events.len())?;
    if !events.iter().any(|&e| e) {
        return Err(Error::NoEvents("breslow baseline"));
    }
    let order = by_time_desc(times);
    let mut jumps: Vec<(f64, f64)> = Vec::new();
    let mut at_risk = 0.0;
    let mut k = 0;
    while k < order.len() {
        let t = times[order[k]];
        let mut end = k;
        let mut deaths = 0usize;
        while end < order.len() && times[order[end]] == t {
            at_risk += libm::exp(risks[order[end]]);
            deaths += events[order[end]] as usize;
            end += 1;
        }
        if deaths > 0 {
            jumps.push((t, deaths as f64 / at_risk));
        }
        k = end;
    }
    jumps.reverse();
    let mut cumulative = Vec::with_capacity(jumps.len());
    let mut h = 0.0;
    for &(_, inc) in &jumps {
        h += inc;
        cumulative.push(h);
    }
    BaselineHazard::new(jumps.into_iter().map(|(t, _)| t).collect(), cumulative)
}

/// `S(t | risk) = exp(-H_0(t) · exp(risk))`.
pub fn survival_function(baseline: &BaselineHazard, risk: f64, t: f64) -> f64 {
    libm::exp(-baseline.at(t) * libm::exp(risk))
}

/// A right-continuous step curve starting at `(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl StepCurve {
    /// Curve value at `t`: the value of the last point at or before `t`.
    pub fn value_at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x <= t);
        if k == 0 {
            1.0
        } else {
            self.values[k - 1]
        }
    }

    pub fn is_nonincreasing(&self) -> bool {
        self.values.windows(2).all(|w| w[1] <= w[0])
    }
}

/// Product-limit estimator.
///
/// The curve has a point at each distinct event time, plus a final point at
/// the last observed time when that is a censoring. At a tied time deaths
/// are counted against the full risk set, before same-time censorings leave.
pub fn kaplan_meier(times: &[f64], events: &[bool]) -> Result<StepCurve> {
    check_lengths("kaplan-meier times/events", times.len(), events.len())?;
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]).then(a.cmp(&b)));

    let mut curve = StepCurve {
        times: alloc::vec![0.0],
        values: alloc::vec![1.0],
    };
    let mut s = 1.0;
    let mut at_risk = times.len();
    let mut k = 0;
    while k < order.len() {
        let t = times[order[k]];
        let mut end = k;
        let mut deaths = 0usize;
        while end < order.len() && times[order[end]] == t {
            deaths += events[order[end]] as usize;
            end += 1;
        }
        if deaths > 0 {
            s *= 1.0 - deaths as f64 / at_risk as f64;
            curve.times.push(t);
            curve.values.push(s);
        }
        at_risk -= end - k;
        k = end;
    }
    if let Some(&last) = order.last() {
        let t_max = times[last];
        if *curve.times.last().unwrap() < t_max {
            curve.times.push(t_max);
            curve.values.push(s);
        }
    }
    Ok(curve)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RiskStratum {
    Low,
    Mid,
    High,
}

impl RiskStratum {
    pub fn name(self) -> &'static str {
        match self {
            RiskStratum::Low => "low",
            RiskStratum::Mid => "mid",
            RiskStratum::High => "high",
        }
    }
}

impl core::str::FromStr for RiskStratum {
    type Err = alloc::string::String;

    fn from_str(s: &str) -> core::result::Result<Self, Self::Err> {
        match s {
            "low" => Ok(RiskStratum::Low),
            "mid" => Ok(RiskStratum::Mid),
            "high" => Ok(RiskStratum::High),
            _ => Err(alloc::format!("unknown stratum {s:?}")),
        }
    }
}

/// Percentile of sorted data, interpolating linearly between order
/// statistics at position `p * (n - 1)`.
pub fn percentile(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptyInput { op: "percentile" });
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

/// Lower and upper tertile cut points.
pub const TERTILE_CUTS: (f64, f64) = (0.33, 0.66);

/// Labels each risk low (`<= p33`), mid (`<= p66`) or high.
pub fn stratify_tertiles(risks: &[f64]) -> Result<Vec<RiskStratum>> {
    if risks.len() < 3 {
        return Err(Error::EmptyInput {
            op: "tertile stratification needs at least 3 subjects",
        });
    }
    let mut sorted = risks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let p33 = percentile(&sorted, TERTILE_CUTS.0)?;
    let p66 = percentile(&sorted, TERTILE_CUTS.1)?;
    Ok(risks
        .iter()
        .map(|&r| {
            if r <= p33 {
                RiskStratum::Low
            } else if r <= p66 {
                RiskStratum::Mid
            } else {
                RiskStratum::High
            }
        })
        .collect())
}

/// Two-group split at the median: low (`<= median`) and high.
pub fn stratify_median(risks: &[f64]) -> Result<Vec<RiskStratum>> {
    let mut sorted = risks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = percentile(&sorted, 0.5)?;
    Ok(risks
        .iter()
        .map(|&r| {
            if r <= median {
                RiskStratum::Low
            } else {
                RiskStratum::High
            }
        })
        .collect())
}
