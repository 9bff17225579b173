//! Patient records, embedding bundles and cohort splits.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One imaging modality. Four MRI contrasts share the radiology encoder,
/// the pathology slide has its own.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModalityId {
    T1,
    T1pc,
    T2,
    Flair,
    Path,
}

impl ModalityId {
    /// Token order of the fused sequence.
    pub const ALL: [ModalityId; 5] = [
        ModalityId::T1,
        ModalityId::T1pc,
        ModalityId::T2,
        ModalityId::Flair,
        ModalityId::Path,
    ];
    pub const RADIOLOGY: [ModalityId; 4] = [
        ModalityId::T1,
        ModalityId::T1pc,
        ModalityId::T2,
        ModalityId::Flair,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModalityId::T1 => "T1",
            ModalityId::T1pc => "T1PC",
            ModalityId::T2 => "T2",
            ModalityId::Flair => "FLAIR",
            ModalityId::Path => "PATH",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_radiology(self) -> bool {
        self != ModalityId::Path
    }
}

impl fmt::Display for ModalityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModalityId {
    type Err = String;

    fn from_str(s: &str) -> core::result::Result<Self, Self::Err> {
        ModalityId::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown modality {s:?}"))
    }
}

/// Precomputed foundation-model embeddings for the five modalities.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBundle {
    vectors: [Vec<f64>; 5],
}

impl EmbeddingBundle {
    /// Vectors in [`ModalityId::ALL`] order.
    pub fn new(vectors: [Vec<f64>; 5]) -> Self {
        Self { vectors }
    }

    pub fn get(&self, m: ModalityId) -> &[f64] {
        &self.vectors[m.index()]
    }

    pub fn get_mut(&mut self, m: ModalityId) -> &mut Vec<f64> {
        &mut self.vectors[m.index()]
    }

    pub fn d_rad(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn d_path(&self) -> usize {
        self.vectors[ModalityId::Path.index()].len()
    }

    fn validate(&self, id: &str) -> Result<()> {
        for m in ModalityId::ALL {
            let v = self.get(m);
            if v.is_empty() {
                return Err(Error::MissingModality {
                    id: id.into(),
                    modality: m,
                });
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFiniteEmbedding {
                    id: id.into(),
                    modality: m,
                });
            }
        }
        for m in ModalityId::RADIOLOGY {
            if self.get(m).len() != self.d_rad() {
                return Err(Error::InvalidRecord {
                    id: id.into(),
                    reason: format!(
                        "radiology modality {m} has dimension {}, T1 has {}",
                        self.get(m).len(),
                        self.d_rad()
                    ),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatientRecord {
    pub id: String,
    pub bundle: EmbeddingBundle,
    /// Days from diagnosis to death or last follow-up.
    pub survival_time: f64,
    /// `true` when death was observed, `false` when censored.
    pub event: bool,
    pub grade: Option<u8>,
}

impl PatientRecord {
    pub fn new(
        id: impl Into<String>,
        bundle: EmbeddingBundle,
        survival_time: f64,
        event: bool,
        grade: Option<u8>,
    ) -> Result<Self> {
        let id = id.into();
        if !(survival_time.is_finite() && survival_time > 0.0) {
            return Err(Error::InvalidRecord {
                id,
                reason: format!("survival time {survival_time} must be positive"),
            });
        }
        if let Some(g) = grade {
            if g > 2 {
                return Err(Error::InvalidRecord {
                    id,
                    reason: format!("grade {g} not in 0..=2"),
                });
            }
        }
        bundle.validate(&id)?;
        Ok(Self {
            id,
            bundle,
            survival_time,
            event,
            grade,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> core::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split {s:?}")),
        }
    }
}

/// Train/validation/test proportions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.75,
            val: 0.05,
            test: 0.20,
        }
    }
}

/// Validated set of patients with consistent embedding widths.
#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    records: Vec<PatientRecord>,
    split: Option<Vec<Split>>,
}

impl Cohort {
    pub fn new(records: Vec<PatientRecord>) -> Result<Self> {
        let mut ids: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicateId(w[0].into()));
        }
        if let Some(first) = records.first() {
            for r in &records[1..] {
                for (m, expected, found) in [
                    (ModalityId::T1, first.bundle.d_rad(), r.bundle.d_rad()),
                    (ModalityId::Path, first.bundle.d_path(), r.bundle.d_path()),
                ] {
                    if expected != found {
                        return Err(Error::InconsistentDimension {
                            modality: m,
                            first: first.id.clone(),
                            expected,
                            second: r.id.clone(),
                            found,
                        });
                    }
                }
            }
        }
        Ok(Self {
            records,
            split: None,
        })
    }

    pub fn records(&self) -> &[PatientRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn d_rad(&self) -> Option<usize> {
        self.records.first().map(|r| r.bundle.d_rad())
    }

    pub fn d_path(&self) -> Option<usize> {
        self.records.first().map(|r| r.bundle.d_path())
    }

    pub fn split(&self) -> Option<&[Split]> {
        self.split.as_deref()
    }

    pub fn with_split(mut self, split: Vec<Split>) -> Result<Self> {
        if split.len() != self.records.len() {
            return Err(Error::LengthMismatch {
                what: "split assignment",
                left: split.len(),
                right: self.records.len(),
            });
        }
        self.split = Some(split);
        Ok(self)
    }

    /// Record indices assigned to `which`, in cohort order.
    pub fn indices(&self, which: Split) -> Result<Vec<usize>> {
        let split = self.split.as_ref().ok_or(Error::MissingSplit)?;
        Ok(split
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == which)
            .map(|(i, _)| i)
            .collect())
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.survival_time).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.event).collect()
    }
}

/// Assigns every record to train, validation or test.
///
/// Sizes are `round(n * fraction)` for validation and test, the remainder
/// goes to training. Events and censored records are shuffled separately
/// and interleaved proportionally so that each split carries roughly the
/// cohort's event rate.
pub fn split_cohort(cohort: &Cohort, fractions: SplitFractions, seed: u64) -> Result<Cohort> {
    let SplitFractions { train, val, test } = fractions;
    if [train, val, test].iter().any(|f| !f.is_finite() || *f <= 0.0) {
        return Err(Error::InvalidFractions(format!(
            "fractions must be positive, got ({train}, {val}, {test})"
        )));
    }
    if (train + val + test - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidFractions(format!(
            "fractions sum to {}, not 1",
            train + val + test
        )));
    }

    let n = cohort.len();
    let n_val = libm::round(n as f64 * val) as usize;
    let n_test = libm::round(n as f64 * test) as usize;
    if n_val + n_test > n {
        return Err(Error::EmptySplit { split: "train" });
    }
    let n_train = n - n_val - n_test;
    if n >= 3 {
        for (count, name) in [(n_train, "train"), (n_val, "val"), (n_test, "test")] {
            if count == 0 {
                return Err(Error::EmptySplit { split: name });
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut events, mut censored): (Vec<usize>, Vec<usize>) =
        (0..n).partition(|&i| cohort.records[i].event);
    events.shuffle(&mut rng);
    censored.shuffle(&mut rng);

    let mut keyed: Vec<(f64, f64, usize)> = Vec::with_capacity(n);
    for stratum in [&events, &censored] {
        let m = stratum.len() as f64;
        for (rank, &i) in stratum.iter().enumerate() {
            keyed.push(((rank as f64 + 0.5) / m, rng.random::<f64>(), i));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let mut assignment = alloc::vec![Split::Train; n];
    for (pos, &(_, _, i)) in keyed.iter().enumerate() {
        assignment[i] = if pos < n_val {
            Split::Val
        } else if pos < n_val + n_test {
            Split::Test
        } else {
            Split::Train
        };
    }
    cohort.clone().with_split(assignment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn record(id: &str, d_rad: usize, d_path: usize, time: f64, event: bool) -> PatientRecord {
        let rad = vec![0.5; d_rad];
        PatientRecord::new(
            id,
            EmbeddingBundle::new([
                rad.clone(),
                rad.clone(),
                rad.clone(),
                rad,
                vec![1.0; d_path],
            ]),
            time,
            event,
            None,
        )
        .unwrap()
    }

    fn cohort(n: usize, n_events: usize) -> Cohort {
        Cohort::new(
            (0..n)
                .map(|i| record(&format!("p{i}"), 2, 3, 1.0 + i as f64, i < n_events))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn inconsistent_dimension_names_both_ids() {
        let err = Cohort::new(vec![record("a", 4, 3, 1.0, true), record("b", 8, 3, 2.0, true)])
            .unwrap_err();
        match err {
            Error::InconsistentDimension {
                first,
                second,
                expected,
                found,
                ..
            } => {
                assert_eq!((first.as_str(), second.as_str()), ("a", "b"));
                assert_eq!((expected, found), (4, 8));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn missing_modality_rejected() {
        let err = PatientRecord::new(
            "x",
            EmbeddingBundle::new([vec![1.0], vec![1.0], vec![1.0], vec![1.0], vec![]]),
            1.0,
            true,
            None,
        )
        .unwrap_err();
        assert_eq!(
            err,
            Error::MissingModality {
                id: "x".into(),
                modality: ModalityId::Path
            }
        );
    }

    #[test]
    fn record_validation() {
        let b = record("a", 1, 1, 1.0, true).bundle;
        assert!(PatientRecord::new("a", b.clone(), 0.0, true, None).is_err());
        assert!(PatientRecord::new("a", b.clone(), 1.0, true, Some(3)).is_err());
        assert!(PatientRecord::new("a", b, 1.0, true, Some(2)).is_ok());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = Cohort::new(vec![record("a", 1, 1, 1.0, true), record("a", 1, 1, 2.0, true)]);
        assert_eq!(err.unwrap_err(), Error::DuplicateId("a".into()));
    }

    #[test]
    fn split_sizes_follow_fractions() {
        let c = split_cohort(&cohort(100, 60), SplitFractions::default(), 7).unwrap();
        let sizes: Vec<usize> = [Split::Train, Split::Val, Split::Test]
            .iter()
            .map(|s| c.indices(*s).unwrap().len())
            .collect();
        assert_eq!(sizes, vec![75, 5, 20]);
    }

    #[test]
    fn split_is_deterministic() {
        let base = cohort(50, 20);
        let a = split_cohort(&base, SplitFractions::default(), 3).unwrap();
        let b = split_cohort(&base, SplitFractions::default(), 3).unwrap();
        assert_eq!(a.split(), b.split());
        let c = split_cohort(&base, SplitFractions::default(), 4).unwrap();
        assert_ne!(a.split(), c.split());
    }

    #[test]
    fn split_is_event_stratified() {
        let base = cohort(20, 10);
        for seed in 0..200 {
            let c = split_cohort(&base, SplitFractions::default(), seed).unwrap();
            for s in [Split::Train, Split::Val, Split::Test] {
                let idx = c.indices(s).unwrap();
                let ev = idx.iter().filter(|&&i| c.records()[i].event).count() as f64;
                let half = idx.len() as f64 / 2.0;
                assert!((ev - half).abs() <= 1.0, "seed {seed} split {s:?}: {ev} of {}", idx.len());
            }
        }
    }

    #[test]
    fn split_rejects_bad_fractions_and_empty_splits() {
        let base = cohort(5, 2);
        let bad = SplitFractions {
            train: 0.7,
            val: 0.1,
            test: 0.1,
        };
        assert!(matches!(
            split_cohort(&base, bad, 0),
            Err(Error::InvalidFractions(_))
        ));
        // 5 * 0.05 rounds to zero validation records.
        assert_eq!(
            split_cohort(&base, SplitFractions::default(), 0).unwrap_err(),
            Error::EmptySplit { split: "val" }
        );
    }
}
