mod common;

use common::*;
use rand::Rng;
use survfuse_core::adapters::*;
use survfuse_core::encoders::TokenSequence;
use survfuse_core::error::Error;
use survfuse_core::gradcheck::grad_check;
use survfuse_core::params::{Bound, ParamStore};
use survfuse_core::survival::cox_ranking_loss_tape;
use survfuse_core::tape::Axis;
use survfuse_core::{Tape, Tensor, Var};

fn tokens(r: &mut rand_chacha::ChaCha8Rng, d: usize) -> TokenSequence {
    TokenSequence::new(random(r, &[5, d], 1.5)).unwrap()
}

fn head_reference(y: &[f64], head: &RiskHeadParams, store: &ParamStore) -> f64 {
    let z = affine(y, store.get(head.weight), store.get(head.bias))[0];
    3.0 * z.clamp(-HEAD_CLAMP, HEAD_CLAMP).tanh()
}

/// Plain-loop evaluation of the scan, returning per-position outputs.
fn mamba_reference(t: &Tensor, p: &MambaAdapterParams, store: &ParamStore) -> (Vec<Vec<f64>>, f64) {
    let a: Vec<f64> = store
        .get(p.a_log)
        .data()
        .iter()
        .map(|x| (-(x.clamp(-40.0, 40.0)).exp()).exp())
        .collect();
    let mut h = vec![0.0; a.len()];
    let mut ys = Vec::new();
    for n in 0..t.dims()[0] {
        let tn = row(t, n);
        let gb: Vec<f64> = vec_matmul(&tn, store.get(p.v_b)).iter().map(|v| sigmoid(v + p.gate_bias)).collect();
        let gated: Vec<f64> = gb.iter().zip(&tn).map(|(g, x)| g * x).collect();
        let u = vec_matmul(&gated, store.get(p.g_b));
        let next: Vec<f64> = h.iter().zip(&a).zip(&u).map(|((h, a), u)| a * h + u).collect();
        let read = match p.readout {
            StateReadout::PostUpdate => &next,
            StateReadout::PreUpdate => &h,
        };
        let gc: Vec<f64> = vec_matmul(&tn, store.get(p.v_c)).iter().map(|v| sigmoid(v + p.gate_bias)).collect();
        let gh: Vec<f64> = gc.iter().zip(read).map(|(g, x)| g * x).collect();
        ys.push(vec_matmul(&gh, store.get(p.g_c)));
        h = next;
    }
    let pooled = match p.pooling {
        Pooling::Last => ys.last().unwrap().clone(),
        Pooling::Mean => {
            let k = ys.len() as f64;
            (0..ys[0].len()).map(|j| ys.iter().map(|y| y[j]).sum::<f64>() / k).collect()
        }
    };
    let risk = head_reference(&pooled, &p.head, store);
    (ys, risk)
}

fn mamba_setup(seed: u64, d_joint: usize, d_h: usize, d_y: usize, gate_bias: f64) -> (ParamStore, MambaAdapterParams) {
    let mut store = ParamStore::new();
    let p = MambaAdapterParams::new(&mut store, &mut rng(seed), d_joint, d_h, d_y, gate_bias);
    (store, p)
}

#[test]
fn initial_transition_is_stable_and_frozen() {
    let (store, p) = mamba_setup(0, 8, 16, 8, 0.0);
    let a = p.transition(&store);
    assert!(a.data().iter().all(|&x| x > 0.0 && x < 1.0));
    assert!((a.data()[0] - 0.5).abs() < 1e-12 && (a.data()[15] - 0.99).abs() < 1e-12);
    assert!(!store.param(p.a_log).trainable);
}

#[test]
fn mamba_matches_reference_recurrence() {
    for seed in 0..100 {
        let mut r = rng(10_000 + seed);
        let gate_bias = r.random_range(-1.0..1.0);
        let (mut store, mut p) = mamba_setup(seed, 4, 3, 2, gate_bias);
        scramble(&mut store, &mut r, 1.0);
        for v in store.get_mut(p.a_log).data_mut() {
            *v = r.random_range(-3.0..1.0);
        }
        for (readout, pooling) in [
            (StateReadout::PostUpdate, Pooling::Last),
            (StateReadout::PreUpdate, Pooling::Mean),
        ] {
            p.readout = readout;
            p.pooling = pooling;
            let t = tokens(&mut r, 4);
            let (y, risk) = mamba_forward(&t, &p, &store).unwrap();
            let (ys, risk_ref) = mamba_reference(t.tensor(), &p, &store);
            assert_eq!(y.dims(), &[5, 2]);
            for (n, yr) in ys.iter().enumerate() {
                assert!(max_abs_diff(&row(&y, n), yr) <= 1e-12, "seed {seed} step {n}");
            }
            assert!((risk - risk_ref).abs() <= 1e-12);
        }
    }
}

fn prefix_sum_params(d: usize, gate_bias: f64) -> (ParamStore, MambaAdapterParams) {
    let (mut store, p) = mamba_setup(1, d, d, d, gate_bias);
    store.get_mut(p.a_log).data_mut().fill(-1e9);
    store.get_mut(p.v_b).data_mut().fill(0.0);
    store.get_mut(p.v_c).data_mut().fill(0.0);
    *store.get_mut(p.g_b) = Tensor::identity(d);
    *store.get_mut(p.g_c) = Tensor::identity(d);
    (store, p)
}

#[test]
fn saturated_identity_configuration_gives_exact_prefix_sums() {
    let d = 6;
    let (store, p) = prefix_sum_params(d, 40.0);
    assert!(p.transition(&store).data().iter().all(|&a| a == 1.0));
    let mut r = rng(2);
    for _ in 0..20 {
        let t = tokens(&mut r, d);
        let (y, _) = mamba_forward(&t, &p, &store).unwrap();
        let mut acc = vec![0.0; d];
        for n in 0..5 {
            for (a, x) in acc.iter_mut().zip(row(t.tensor(), n)) {
                *a += x;
            }
            assert_eq!(row(&y, n), acc);
        }
    }
}

#[test]
fn moderate_gate_bias_gives_prefix_sums_to_gate_precision() {
    let d = 6;
    let (store, p) = prefix_sum_params(d, 20.0);
    let t = tokens(&mut rng(3), d);
    let (y, _) = mamba_forward(&t, &p, &store).unwrap();
    let mut acc = vec![0.0; d];
    for n in 0..5 {
        for (a, x) in acc.iter_mut().zip(row(t.tensor(), n)) {
            *a += x;
        }
        assert!(max_abs_diff(&row(&y, n), &acc) < 1e-7);
    }
}

#[test]
fn zero_tokens_give_zero_outputs() {
    let (mut store, p) = mamba_setup(4, 5, 4, 3, 0.0);
    let mut r = rng(5);
    scramble(&mut store, &mut r, 1.0);
    let b = store.get(p.head.bias).data()[0];
    let t = TokenSequence::new(Tensor::zeros(&[5, 5])).unwrap();
    let (y, risk) = mamba_forward(&t, &p, &store).unwrap();
    assert_eq!(y, Tensor::zeros(&[5, 3]));
    assert!((risk - 3.0 * b.tanh()).abs() < 1e-15);
    let dispatched = predict_risk(&t, AdapterKind::Mamba, &AdapterParams::Mamba(p), &store).unwrap();
    assert_eq!(dispatched, risk);
}

#[test]
fn reversing_tokens_changes_last_output() {
    let (mut store, p) = mamba_setup(6, 4, 4, 3, 0.0);
    let mut r = rng(7);
    scramble(&mut store, &mut r, 1.0);
    let t = tokens(&mut r, 4);
    let mut rev = Vec::new();
    for n in (0..5).rev() {
        rev.extend(row(t.tensor(), n));
    }
    let tr = TokenSequence::new(Tensor::new(&[5, 4], rev).unwrap()).unwrap();
    let (y, _) = mamba_forward(&t, &p, &store).unwrap();
    let (yr, _) = mamba_forward(&tr, &p, &store).unwrap();
    assert!(max_abs_diff(&row(&y, 4), &row(&yr, 4)) > 1e-6);
}

fn scan_steps(p: &MambaAdapterParams, store: &ParamStore, t: Tensor) -> (usize, Tensor) {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let v = tape.leaf(t);
    let out = p.scan(&mut tape, &bound, store, v).unwrap();
    (out.steps, tape.value(out.y).clone())
}

#[test]
fn scan_is_linear_in_sequence_length() {
    let (store, p) = mamba_setup(8, 4, 4, 4, 0.0);
    let mut r = rng(9);
    for len in [1, 5, 17, 64] {
        let (s1, _) = scan_steps(&p, &store, random(&mut r, &[len, 4], 1.0));
        let (s2, _) = scan_steps(&p, &store, random(&mut r, &[2 * len, 4], 1.0));
        assert_eq!((s1, s2), (len, 2 * len));
    }
}

#[test]
fn state_stays_within_geometric_bound() {
    let d = 8;
    let (mut store, p) = mamba_setup(10, d, d, d, 40.0);
    let mut r = rng(11);
    scramble(&mut store, &mut r, 1.0);
    store.get_mut(p.v_b).data_mut().fill(0.0);
    store.get_mut(p.v_c).data_mut().fill(0.0);
    *store.get_mut(p.g_c) = Tensor::identity(d);
    let m = 2.0;
    let len = 10_000;
    let t = Tensor::new(&[len, d], (0..len * d).map(|_| r.random_range(-m..=m)).collect()).unwrap();
    // With the identity readout and gates at 1, y_n is the state h_{n+1}.
    let (steps, y) = scan_steps(&p, &store, t);
    assert_eq!(steps, len);
    let g = store.get(p.g_b);
    let g_norm = (0..d).map(|j| (0..d).map(|k| g.get(k, j).abs()).sum::<f64>()).fold(0.0, f64::max);
    let a_max = p.transition(&store).data().iter().cloned().fold(0.0, f64::max);
    let bound = m * g_norm / (1.0 - a_max);
    assert!(y.max_abs() <= bound, "{} > {bound}", y.max_abs());
}

#[test]
fn non_finite_state_reports_step() {
    let (mut store, p) = mamba_setup(12, 3, 3, 3, 0.0);
    store.get_mut(p.g_b).data_mut().fill(f64::MAX);
    let mut data = vec![0.0; 15];
    data[6..9].fill(1.0);
    let t = TokenSequence::new(Tensor::new(&[5, 3], data).unwrap()).unwrap();
    assert!(matches!(mamba_forward(&t, &p, &store), Err(Error::NonFiniteScan { step: 3 })));
}

fn mlp_setup(seed: u64, d: usize) -> (ParamStore, MlpAdapterParams) {
    let mut store = ParamStore::new();
    let p = MlpAdapterParams::new(&mut store, &mut rng(seed), d, 7, 3);
    (store, p)
}

#[test]
fn mlp_matches_reference() {
    for seed in 0..100 {
        let (mut store, p) = mlp_setup(seed, 4);
        let mut r = rng(20_000 + seed);
        scramble(&mut store, &mut r, 0.8);
        let t = tokens(&mut r, 4);
        let flat = t.tensor().data().to_vec();
        let h: Vec<f64> = affine(&flat, store.get(p.hidden.weight), store.get(p.hidden.bias))
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        let z = affine(&h, store.get(p.output.weight), store.get(p.output.bias));
        let expected = head_reference(&z, &p.head, &store);
        let got = mlp_adapter_forward(&t, &p, &store).unwrap();
        assert!((got - expected).abs() <= 1e-12, "seed {seed}");
    }
}

#[test]
fn mlp_with_zero_weights_outputs_head_bias() {
    let (mut store, p) = mlp_setup(1, 4);
    for id in [p.hidden.weight, p.output.weight, p.head.weight] {
        store.get_mut(id).data_mut().fill(0.0);
    }
    store.get_mut(p.head.bias).data_mut()[0] = 0.37;
    let t = tokens(&mut rng(2), 4);
    assert!((mlp_adapter_forward(&t, &p, &store).unwrap() - 3.0 * 0.37f64.tanh()).abs() < 1e-15);
}

#[test]
fn mlp_depends_on_token_order() {
    let (mut store, p) = mlp_setup(3, 4);
    let mut r = rng(4);
    scramble(&mut store, &mut r, 0.8);
    let t = tokens(&mut r, 4);
    let mut swapped = row(t.tensor(), 1);
    swapped.extend(row(t.tensor(), 0));
    swapped.extend_from_slice(&t.tensor().data()[8..]);
    let s = TokenSequence::new(Tensor::new(&[5, 4], swapped).unwrap()).unwrap();
    let a = mlp_adapter_forward(&t, &p, &store).unwrap();
    let b = mlp_adapter_forward(&s, &p, &store).unwrap();
    assert!((a - b).abs() > 1e-9);
}

fn attention_setup(seed: u64, d: usize, d_k: usize) -> (ParamStore, AttentionAdapterParams) {
    let mut store = ParamStore::new();
    let p = AttentionAdapterParams::new(&mut store, &mut rng(seed), d, d_k);
    (store, p)
}

fn attention_reference(t: &Tensor, p: &AttentionAdapterParams, store: &ParamStore) -> (f64, Vec<Vec<f64>>) {
    let rows: Vec<Vec<f64>> = (0..5).map(|n| row(t, n)).collect();
    let q: Vec<Vec<f64>> = rows.iter().map(|x| vec_matmul(x, store.get(p.query))).collect();
    let k: Vec<Vec<f64>> = rows.iter().map(|x| vec_matmul(x, store.get(p.key))).collect();
    let v: Vec<Vec<f64>> = rows.iter().map(|x| vec_matmul(x, store.get(p.value))).collect();
    let d_k = q[0].len();
    let mut weights = Vec::new();
    let mut pooled = vec![0.0; d_k];
    for qi in &q {
        let scores: Vec<f64> = k
            .iter()
            .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / (d_k as f64).sqrt())
            .collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let z: f64 = e.iter().sum();
        let w: Vec<f64> = e.iter().map(|x| x / z).collect();
        for (j, wj) in w.iter().enumerate() {
            for c in 0..d_k {
                pooled[c] += wj * v[j][c] / 5.0;
            }
        }
        weights.push(w);
    }
    (head_reference(&pooled, &p.head, store), weights)
}

#[test]
fn attention_matches_reference() {
    for seed in 0..100 {
        let (mut store, p) = attention_setup(seed, 4, 3);
        let mut r = rng(30_000 + seed);
        scramble(&mut store, &mut r, 1.0);
        let t = tokens(&mut r, 4);
        let (risk, w) = attention_adapter_forward(&t, &p, &store).unwrap();
        let (risk_ref, w_ref) = attention_reference(t.tensor(), &p, &store);
        assert!((risk - risk_ref).abs() <= 1e-12, "seed {seed}");
        for (i, wr) in w_ref.iter().enumerate() {
            assert!(max_abs_diff(&row(&w, i), wr) <= 1e-12);
        }
    }
}

#[test]
fn attention_is_uniform_for_identical_tokens_or_zero_queries() {
    let (mut store, p) = attention_setup(1, 4, 4);
    let mut r = rng(2);
    scramble(&mut store, &mut r, 1.0);
    let one = random(&mut r, &[1, 4], 1.0);
    let same = TokenSequence::new(Tensor::new(&[5, 4], one.data().repeat(5)).unwrap()).unwrap();
    let (_, w) = attention_adapter_forward(&same, &p, &store).unwrap();
    assert!(w.data().iter().all(|&x| (x - 0.2).abs() < 1e-15));

    store.get_mut(p.query).data_mut().fill(0.0);
    let t = tokens(&mut r, 4);
    let (_, w) = attention_adapter_forward(&t, &p, &store).unwrap();
    assert!(w.data().iter().all(|&x| (x - 0.2).abs() < 1e-15));
}

fn all_adapters(seed: u64, d: usize) -> (ParamStore, Vec<AdapterParams>) {
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    let m = MambaAdapterParams::new(&mut store, &mut r, d, d, d, 0.0);
    let l = MlpAdapterParams::new(&mut store, &mut r, d, d, d);
    let a = AttentionAdapterParams::new(&mut store, &mut r, d, d);
    (store, vec![AdapterParams::Mamba(m), AdapterParams::Mlp(l), AdapterParams::Attention(a)])
}

#[test]
fn predict_risk_dispatches_bit_for_bit() {
    let (mut store, adapters) = all_adapters(1, 4);
    let mut r = rng(2);
    scramble(&mut store, &mut r, 1.0);
    let t = tokens(&mut r, 4);
    for a in &adapters {
        let direct = match a {
            AdapterParams::Mamba(p) => mamba_forward(&t, p, &store).unwrap().1,
            AdapterParams::Mlp(p) => mlp_adapter_forward(&t, p, &store).unwrap(),
            AdapterParams::Attention(p) => attention_adapter_forward(&t, p, &store).unwrap().0,
        };
        let dispatched = predict_risk(&t, a.kind(), a, &store).unwrap();
        assert_eq!(direct.to_bits(), dispatched.to_bits());
        for other in AdapterKind::ALL.into_iter().filter(|k| *k != a.kind()) {
            assert!(matches!(
                predict_risk(&t, other, a, &store),
                Err(Error::AdapterMismatch { .. })
            ));
        }
    }
}

#[test]
fn risks_stay_strictly_inside_bound() {
    let mut r = rng(3);
    for i in 0..10_000u64 {
        let (mut store, adapters) = all_adapters(i, 3);
        // Large weights push the head into saturation.
        let scale = if i % 2 == 0 { 1.0 } else { 50.0 };
        scramble(&mut store, &mut r, scale);
        let t = TokenSequence::new(random(&mut r, &[5, 3], 10.0)).unwrap();
        let a = &adapters[(i % 3) as usize];
        let risk = predict_risk(&t, a.kind(), a, &store).unwrap();
        assert!(risk > -RISK_BOUND && risk < RISK_BOUND, "{risk}");
    }
}

#[test]
fn adapters_composed_with_cox_loss_pass_grad_check() {
    let times = [3.0, 1.0, 4.0, 1.5];
    let events = [true, true, false, true];
    for seed in 0..5 {
        let (mut store, adapters) = all_adapters(40 + seed, 3);
        let mut r = rng(50 + seed);
        scramble(&mut store, &mut r, 0.8);
        let batch: Vec<Tensor> = (0..4).map(|_| random(&mut r, &[5, 3], 1.0)).collect();
        for a in &adapters {
            let mut params: Vec<Tensor> = store.params().iter().map(|p| p.value.clone()).collect();
            let n_store = params.len();
            params.extend(batch.iter().cloned());
            let f = |tape: &mut Tape, vars: &[Var]| {
                let bound = Bound::from_vars(vars[..n_store].to_vec());
                let risks = vars[n_store..]
                    .iter()
                    .map(|&t| a.risk_on_tape(tape, &bound, &store, t))
                    .collect::<survfuse_core::Result<Vec<_>>>()?;
                let row = tape.concat(&risks, Axis::Cols)?;
                cox_ranking_loss_tape(tape, row, &times, &events)
            };
            let report = grad_check(f, &params, 1e-5, 1e-4).unwrap();
            if report.relu_margin < 1e-3 {
                continue;
            }
            assert!(report.passed(), "{} seed {seed}: {}", a.kind(), report.max_error);
        }
    }
}
