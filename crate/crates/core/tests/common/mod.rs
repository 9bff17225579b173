#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use survfuse_core::data::EmbeddingBundle;
use survfuse_core::params::ParamStore;
use survfuse_core::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(rng: &mut ChaCha8Rng, dims: &[usize], scale: f64) -> Tensor {
    let n = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn bundle(rng: &mut ChaCha8Rng, d_rad: usize, d_path: usize) -> EmbeddingBundle {
    EmbeddingBundle::new([
        random_vec(rng, d_rad, 1.0),
        random_vec(rng, d_rad, 1.0),
        random_vec(rng, d_rad, 1.0),
        random_vec(rng, d_rad, 1.0),
        random_vec(rng, d_path, 1.0),
    ])
}

/// Overwrites every trainable tensor with uniform noise, so zero-initialized
/// biases and identity affines do not hide bugs.
pub fn scramble(store: &mut ParamStore, rng: &mut ChaCha8Rng, scale: f64) {
    for p in store.params_mut() {
        if p.trainable {
            for v in p.value.data_mut() {
                *v = rng.random_range(-scale..scale);
            }
        }
    }
}

pub fn row(m: &Tensor, i: usize) -> Vec<f64> {
    let c = m.dims()[1];
    m.data()[i * c..(i + 1) * c].to_vec()
}

/// `x W + b` for a row vector, written out as loops.
pub fn affine(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (rows, cols) = (w.dims()[0], w.dims()[1]);
    assert_eq!(rows, x.len());
    (0..cols)
        .map(|j| {
            let mut s = b.data()[j];
            for (k, xk) in x.iter().enumerate() {
                s += xk * w.get(k, j);
            }
            s
        })
        .collect()
}

pub fn vec_matmul(x: &[f64], w: &Tensor) -> Vec<f64> {
    affine(x, w, &Tensor::zeros(&[1, w.dims()[1]]))
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
