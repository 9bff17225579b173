mod common;

use common::*;
use proptest::prelude::*;
use survfuse_core::data::{EmbeddingBundle, ModalityId};
use survfuse_core::encoders::{encode_patient, EncoderDims, EncoderParams, ModalityEncoder};
use survfuse_core::error::Error;
use survfuse_core::gradcheck::grad_check;
use survfuse_core::params::{Bound, ParamStore};
use survfuse_core::Tensor;

const DIMS: EncoderDims = EncoderDims {
    d_rad: 6,
    d_path: 10,
    d_hidden: 5,
    d_joint: 4,
};

fn setup(seed: u64) -> (ParamStore, EncoderParams) {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let enc = EncoderParams::new(&mut store, &mut r, DIMS);
    (store, enc)
}

fn reference_token(x: &[f64], enc: &ModalityEncoder, store: &ParamStore) -> Vec<f64> {
    let h: Vec<f64> = affine(x, store.get(enc.hidden.weight), store.get(enc.hidden.bias))
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    let o = affine(&h, store.get(enc.output.weight), store.get(enc.output.bias));
    let n = o.len() as f64;
    let mean = o.iter().sum::<f64>() / n;
    let var = o.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let scale = store.get(enc.norm_scale).data();
    let shift = store.get(enc.norm_shift).data();
    o.iter()
        .enumerate()
        .map(|(k, v)| (v - mean) / var.sqrt() * scale[k] + shift[k])
        .collect()
}

#[test]
fn matches_straight_line_reference() {
    for seed in 0..50 {
        let (mut store, enc) = setup(seed);
        let mut r = rng(1000 + seed);
        scramble(&mut store, &mut r, 0.8);
        let b = bundle(&mut r, DIMS.d_rad, DIMS.d_path);
        let tokens = encode_patient(&b, &enc, &store).unwrap();
        for m in ModalityId::ALL {
            let e = if m.is_radiology() { &enc.rad } else { &enc.path };
            let expected = reference_token(b.get(m), e, &store);
            assert!(max_abs_diff(tokens.token(m), &expected) < 1e-12, "seed {seed} {m}");
        }
    }
}

#[test]
fn zero_output_map_gives_zero_tokens() {
    let (mut store, enc) = setup(1);
    for e in [enc.rad, enc.path] {
        store.get_mut(e.output.weight).data_mut().fill(0.0);
        store.get_mut(e.output.bias).data_mut().fill(0.0);
    }
    let b = bundle(&mut rng(2), DIMS.d_rad, DIMS.d_path);
    let tokens = encode_patient(&b, &enc, &store).unwrap();
    assert_eq!(tokens.tensor(), &Tensor::zeros(&[5, DIMS.d_joint]));
}

#[test]
fn permuting_pathology_changes_only_its_token() {
    let (mut store, enc) = setup(3);
    let mut r = rng(4);
    scramble(&mut store, &mut r, 0.8);
    let b = bundle(&mut r, DIMS.d_rad, DIMS.d_path);
    let mut p = b.clone();
    p.get_mut(ModalityId::Path).reverse();
    let before = encode_patient(&b, &enc, &store).unwrap();
    let after = encode_patient(&p, &enc, &store).unwrap();
    for m in ModalityId::RADIOLOGY {
        assert_eq!(before.token(m), after.token(m));
    }
    assert_ne!(before.token(ModalityId::Path), after.token(ModalityId::Path));
}

#[test]
fn swapping_contrasts_swaps_tokens() {
    let (mut store, enc) = setup(5);
    let mut r = rng(6);
    scramble(&mut store, &mut r, 0.8);
    let b = bundle(&mut r, DIMS.d_rad, DIMS.d_path);
    let mut s = b.clone();
    let t1 = b.get(ModalityId::T1).to_vec();
    let t2 = b.get(ModalityId::T2).to_vec();
    *s.get_mut(ModalityId::T1) = t2;
    *s.get_mut(ModalityId::T2) = t1;
    let x = encode_patient(&b, &enc, &store).unwrap();
    let y = encode_patient(&s, &enc, &store).unwrap();
    assert_eq!(x.token(ModalityId::T1), y.token(ModalityId::T2));
    assert_eq!(x.token(ModalityId::T2), y.token(ModalityId::T1));
    assert_eq!(x.token(ModalityId::Flair), y.token(ModalityId::Flair));
}

#[test]
fn dimension_mismatch_names_modality() {
    let (store, enc) = setup(7);
    let mut b = bundle(&mut rng(8), DIMS.d_rad, DIMS.d_path);
    b.get_mut(ModalityId::Flair).push(0.0);
    match encode_patient(&b, &enc, &store) {
        Err(Error::DimensionMismatch { modality, expected, found }) => {
            assert_eq!((modality, expected, found), (ModalityId::Flair, 6, 7));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn encoder_gradients_match_finite_differences() {
    let mut checked = 0;
    let mut seed = 0;
    while checked < 10 {
        seed += 1;
        let (mut store, enc) = setup(seed);
        let mut r = rng(500 + seed);
        scramble(&mut store, &mut r, 0.8);
        let b = bundle(&mut r, DIMS.d_rad, DIMS.d_path);
        let weights = random(&mut r, &[5, DIMS.d_joint], 1.0);
        let params: Vec<Tensor> = store.params().iter().map(|p| p.value.clone()).collect();
        let f = |tape: &mut survfuse_core::Tape, vars: &[survfuse_core::Var]| {
            let bound = Bound::from_vars(vars.to_vec());
            let tokens = enc.encode_on_tape(tape, &bound, &b)?;
            let w = tape.leaf(weights.clone());
            let p = tape.mul(tokens, w)?;
            let t = tape.tanh(p);
            Ok(tape.sum(t))
        };
        let report = grad_check(f, &params, 1e-5, 1e-4).unwrap();
        if report.relu_margin < 1e-3 {
            continue;
        }
        assert!(report.passed(), "seed {seed}: {} at {:?}", report.max_error, report.worst);
        checked += 1;
    }
}

fn arb_bundle() -> impl Strategy<Value = EmbeddingBundle> {
    (
        prop::collection::vec(prop::collection::vec(-5.0f64..5.0, DIMS.d_rad), 4),
        prop::collection::vec(-5.0f64..5.0, DIMS.d_path),
    )
        .prop_map(|(rad, path)| {
            EmbeddingBundle::new([rad[0].clone(), rad[1].clone(), rad[2].clone(), rad[3].clone(), path])
        })
}

proptest! {
    #[test]
    fn tokens_are_standardized_before_affine(b in arb_bundle(), seed in 0u64..1000) {
        // Fresh parameters have an identity affine.
        let (store, enc) = setup(seed);
        let tokens = encode_patient(&b, &enc, &store).unwrap();
        for m in ModalityId::ALL {
            let t = tokens.token(m);
            let n = t.len() as f64;
            let mean = t.iter().sum::<f64>() / n;
            let var = t.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            if t.iter().all(|&v| v == 0.0) {
                continue;
            }
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-9);
        }
    }
}
