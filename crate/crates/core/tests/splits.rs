use proptest::prelude::*;
use survfuse_core::data::{split_cohort, Cohort, EmbeddingBundle, PatientRecord, Split, SplitFractions};

fn cohort(events: &[bool]) -> Cohort {
    let records = events
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            let v = vec![i as f64; 2];
            let bundle = EmbeddingBundle::new([v.clone(), v.clone(), v.clone(), v.clone(), vec![0.0; 3]]);
            PatientRecord::new(format!("r{i}"), bundle, 1.0 + i as f64, e, None).unwrap()
        })
        .collect();
    Cohort::new(records).unwrap()
}

proptest! {
    #[test]
    fn split_is_a_deterministic_stratified_partition(
        events in prop::collection::vec(any::<bool>(), 20..200),
        seed in any::<u64>(),
    ) {
        let c = cohort(&events);
        let n = c.len();
        let f = SplitFractions::default();
        let a = split_cohort(&c, f, seed).unwrap();
        let b = split_cohort(&c, f, seed).unwrap();
        prop_assert_eq!(a.split(), b.split());

        let train = a.indices(Split::Train).unwrap();
        let val = a.indices(Split::Val).unwrap();
        let test = a.indices(Split::Test).unwrap();
        let mut all: Vec<usize> = train.iter().chain(&val).chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());

        let n_val = (n as f64 * 0.05).round() as usize;
        let n_test = (n as f64 * 0.20).round() as usize;
        prop_assert_eq!((val.len(), test.len(), train.len()), (n_val, n_test, n - n_val - n_test));

        let rate = events.iter().filter(|&&e| e).count() as f64 / n as f64;
        for part in [&train, &val, &test] {
            let k = part.iter().filter(|&&i| events[i]).count() as f64;
            prop_assert!((k - rate * part.len() as f64).abs() <= 2.0);
        }
    }
}

#[test]
fn hundred_records_split_as_configured() {
    let c = cohort(&(0..100).map(|i| i % 3 == 0).collect::<Vec<_>>());
    let s = split_cohort(&c, SplitFractions::default(), 7).unwrap();
    let sizes: Vec<usize> = [Split::Train, Split::Val, Split::Test]
        .iter()
        .map(|&w| s.indices(w).unwrap().len())
        .collect();
    assert_eq!(sizes, vec![75, 5, 20]);
}
