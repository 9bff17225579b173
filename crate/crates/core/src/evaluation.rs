//! Harrell's concordance index.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Concordance summary for one set of predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub c_index: f64,
    /// Concordance restricted to comparable pairs whose longer-lived member
    /// is censored; `None` when there is no such pair.
    pub c_index_censored_pairs: Option<f64>,
    pub n_comparable_pairs: u64,
    pub n_tied_risk_pairs: u64,
}

/// Binary indexed tree over risk ranks.
struct Fenwick {
    tree: Vec<u64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self {
            tree: vec![0; n + 1],
        }
    }

    fn add(&mut self, rank: usize) {
        let mut i = rank + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Number of inserted ranks `< rank`.
    fn below(&self, rank: usize) -> u64 {
        let mut i = rank;
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

#[derive(Default)]
struct Tally {
    comparable: u64,
    concordant: u64,
    tied: u64,
}

impl Tally {
    fn ratio(&self) -> Option<f64> {
        (self.comparable > 0)
            .then(|| (self.concordant as f64 + 0.5 * self.tied as f64) / self.comparable as f64)
    }
}

/// Harrell's c-index: pairs `(i, j)` with `times[i] < times[j]` and
/// `events[i]` are comparable, and concordant when `risks[i] > risks[j]`.
/// Tied risks count one half.
///
/// Runs in `O(n log n)` by sweeping subjects from the latest time down and
/// counting previously seen (strictly later) subjects by risk rank.
pub fn concordance_index(risks: &[f64], times: &[f64], events: &[bool]) -> Result<MetricReport> {
    let n = risks.len();
    if times.len() != n || events.len() != n {
        return Err(Error::LengthMismatch {
            what: "concordance inputs",
            left: n,
            right: if times.len() != n {
                times.len()
            } else {
                events.len()
            },
        });
    }

    let mut distinct = risks.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let rank = |r: f64| distinct.partition_point(|&x| x < r);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));

    let mut later_all = Fenwick::new(distinct.len());
    let mut later_censored = Fenwick::new(distinct.len());
    let mut n_all = 0u64;
    let mut n_censored = 0u64;
    let mut all = Tally::default();
    let mut censored = Tally::default();

    let mut k = 0;
    while k < n {
        let t = times[order[k]];
        let mut end = k;
        while end < n && times[order[end]] == t {
            end += 1;
        }
        for &i in &order[k..end] {
            if !events[i] {
                continue;
            }
            let r = rank(risks[i]);
            for (tree, total, tally) in [
                (&later_all, n_all, &mut all),
                (&later_censored, n_censored, &mut censored),
            ] {
                let below = tree.below(r);
                let at_or_below = tree.below(r + 1);
                tally.comparable += total;
                tally.concordant += below;
                tally.tied += at_or_below - below;
            }
        }
        for &i in &order[k..end] {
            let r = rank(risks[i]);
            later_all.add(r);
            n_all += 1;
            if !events[i] {
                later_censored.add(r);
                n_censored += 1;
            }
        }
        k = end;
    }

    let c_index = all.ratio().ok_or(Error::NoComparablePairs)?;
    Ok(MetricReport {
        c_index,
        c_index_censored_pairs: censored.ratio(),
        n_comparable_pairs: all.comparable,
        n_tied_risk_pairs: all.tied,
    })
}
