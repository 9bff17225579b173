//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every primitive evaluates its forward value eagerly and appends a node to
//! the [`Tape`]. Because a node can only reference nodes that already exist,
//! the tape is topologically ordered by construction and [`Tape::backward`]
//! is a single reverse sweep that visits each node once.
//!
//! ```
//! use survfuse_core::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).item(), Some(6.0));
//! ```

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    Concat(Vec<Var>, Axis),
    Slice(Var, Axis, usize),
    Gather(Var, Vec<usize>),
    LogSumExp(Var),
    Transpose(Var),
    SoftmaxRows(Var),
    /// Row-wise normalization; the flags mark zero-variance rows.
    LayerNorm(Var, Vec<f64>, Vec<bool>),
    Map(Var, fn(f64) -> f64),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Record of primitive operations for one forward pass.
///
/// A tape is single-writer: one training step builds and consumes one tape.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    relu_margin: f64,
}

/// Gradients of a scalar output with respect to every node on the tape.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Shape>,
}

impl Gradients {
    /// Gradient for `var`; nodes with no path to the output get zeros.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[var.0].dims()),
        }
    }

    pub fn is_connected(&self, var: Var) -> bool {
        self.grads[var.0].is_some()
    }
}

/// Largest input magnitude treated as a zero-variance row by layer norm.
pub const LAYER_NORM_DEGENERATE_VAR: f64 = 1e-24;

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            relu_margin: f64::INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Smallest `|x|` seen by any relu on this tape.
    ///
    /// Finite-difference checks are only meaningful when this exceeds the
    /// perturbation size times the local sensitivity.
    pub fn relu_margin(&self) -> f64 {
        self.relu_margin
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_with(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_with(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_with(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let input = self.value(a);
        let margin = input.data().iter().fold(self.relu_margin, |m, x| m.min(x.abs()));
        let v = input.map(|x| if x > 0.0 { x } else { 0.0 });
        self.relu_margin = margin;
        self.push(v, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(libm::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(libm::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(libm::log);
        self.push(v, Op::Log(a))
    }

    /// Clamps to `[lo, hi]`; the gradient is passed through only inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::EmptyInput { op: "mean" });
        }
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        Ok(self.push(Tensor::scalar(m), Op::Mean(a)))
    }

    /// Concatenates matrices along `axis`.
    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptyInput { op: "concat" })?;
        let (r0, c0) = self.value(first).matrix_dims("concat")?;
        let mut rows = 0;
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            let (r, c) = t.matrix_dims("concat")?;
            let ok = match axis {
                Axis::Rows => c == c0,
                Axis::Cols => r == r0,
            };
            if !ok {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: self.value(first).shape().clone(),
                    rhs: t.shape().clone(),
                });
            }
            rows += r;
            cols += c;
        }
        let value = match axis {
            Axis::Rows => {
                let mut data = Vec::with_capacity(rows * c0);
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                }
                Tensor::new(&[rows, c0], data)?
            }
            Axis::Cols => {
                let mut data = Vec::with_capacity(r0 * cols);
                for i in 0..r0 {
                    for &p in parts {
                        let t = self.value(p);
                        let c = t.dims()[1];
                        data.extend_from_slice(&t.data()[i * c..(i + 1) * c]);
                    }
                }
                Tensor::new(&[r0, cols], data)?
            }
        };
        Ok(self.push(value, Op::Concat(parts.to_vec(), axis)))
    }

    /// Takes `len` rows or columns starting at `start`.
    pub fn slice(&mut self, a: Var, axis: Axis, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.matrix_dims("slice")?;
        let end = start + len;
        let limit = match axis {
            Axis::Rows => r,
            Axis::Cols => c,
        };
        if end > limit || len == 0 {
            return Err(Error::OutOfRange {
                op: "slice",
                start,
                end,
                shape: t.shape().clone(),
            });
        }
        let value = match axis {
            Axis::Rows => Tensor::new(&[len, c], t.data()[start * c..end * c].to_vec())?,
            Axis::Cols => {
                let mut data = Vec::with_capacity(r * len);
                for i in 0..r {
                    data.extend_from_slice(&t.data()[i * c + start..i * c + end]);
                }
                Tensor::new(&[r, len], data)?
            }
        };
        Ok(self.push(value, Op::Slice(a, axis, start)))
    }

    /// Picks flat elements of `a` into a `1 x k` row.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.len()) {
            return Err(Error::OutOfRange {
                op: "gather",
                start: bad,
                end: bad + 1,
                shape: t.shape().clone(),
            });
        }
        let data: Vec<f64> = indices.iter().map(|&i| t.data()[i]).collect();
        let value = Tensor::new(&[1, data.len()], data)?;
        Ok(self.push(value, Op::Gather(a, indices.to_vec())))
    }

    /// `log Σ exp(a)` over all elements, as a scalar.
    pub fn logsumexp(&mut self, a: Var) -> Result<Var> {
        let v = logsumexp(self.value(a).data())?;
        Ok(self.push(Tensor::scalar(v), Op::LogSumExp(a)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose()?;
        Ok(self.push(v, Op::Transpose(a)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.matrix_dims("softmax_rows")?;
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = &t.data()[i * c..(i + 1) * c];
            let m = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let start = data.len();
            data.extend(row.iter().map(|&x| libm::exp(x - m)));
            let z: f64 = data[start..].iter().sum();
            for v in &mut data[start..] {
                *v /= z;
            }
        }
        let value = Tensor::new(&[r, c], data)?;
        Ok(self.push(value, Op::SoftmaxRows(a)))
    }

    /// Normalizes each row to mean 0 and (population) variance 1.
    ///
    /// Rows whose variance is at most [`LAYER_NORM_DEGENERATE_VAR`] map to
    /// zeros and pass no gradient.
    pub fn layer_norm_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.matrix_dims("layer_norm")?;
        let mut data = Vec::with_capacity(r * c);
        let mut inv_std = Vec::with_capacity(r);
        let mut degenerate = Vec::with_capacity(r);
        for i in 0..r {
            let row = &t.data()[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            if var <= LAYER_NORM_DEGENERATE_VAR {
                data.extend(core::iter::repeat_n(0.0, c));
                inv_std.push(0.0);
                degenerate.push(true);
            } else {
                let s = 1.0 / libm::sqrt(var);
                data.extend(row.iter().map(|x| (x - mean) * s));
                inv_std.push(s);
                degenerate.push(false);
            }
        }
        let value = Tensor::new(&[r, c], data)?;
        Ok(self.push(value, Op::LayerNorm(a, inv_std, degenerate)))
    }

    /// Elementwise `f` with a caller-supplied derivative `df(x)`.
    pub fn map(&mut self, a: Var, f: fn(f64) -> f64, df: fn(f64) -> f64) -> Var {
        let v = self.value(a).map(f);
        self.push(v, Op::Map(a, df))
    }

    /// Reverse sweep from a scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(Error::NonScalarOutput {
                shape: out.shape().clone(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::full(out.dims(), 1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    accumulate(&mut grads, *a, matmul_nt(&g, bv));
                    accumulate(&mut grads, *b, matmul_tn(av, &g));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let da = zip(&g, self.value(*b), |g, y| g * y);
                    let db = zip(&g, self.value(*a), |g, x| g * x);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddScalar(a) => accumulate(&mut grads, *a, g.clone()),
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.map(|x| x * c)),
                Op::Relu(a) => {
                    let d = zip(&g, self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 });
                    accumulate(&mut grads, *a, d);
                }
                Op::Tanh(a) => {
                    let d = zip(&g, &node.value, |g, y| g * (1.0 - y * y));
                    accumulate(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let d = zip(&g, &node.value, |g, y| g * y * (1.0 - y));
                    accumulate(&mut grads, *a, d);
                }
                Op::Exp(a) => {
                    let d = zip(&g, &node.value, |g, y| g * y);
                    accumulate(&mut grads, *a, d);
                }
                Op::Log(a) => {
                    let d = zip(&g, self.value(*a), |g, x| g / x);
                    accumulate(&mut grads, *a, d);
                }
                Op::Clamp(a, lo, hi) => {
                    let d = zip(&g, self.value(*a), |g, x| {
                        if x >= *lo && x <= *hi {
                            g
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, *a, d);
                }
                Op::Sum(a) => {
                    let gv = g.data()[0];
                    accumulate(&mut grads, *a, Tensor::full(self.value(*a).dims(), gv));
                }
                Op::Mean(a) => {
                    let t = self.value(*a);
                    let gv = g.data()[0] / t.len() as f64;
                    accumulate(&mut grads, *a, Tensor::full(t.dims(), gv));
                }
                Op::Concat(parts, axis) => {
                    let cols = g.dims()[1];
                    let mut offset = 0;
                    for p in parts {
                        let t = self.value(*p);
                        let (r, c) = (t.dims()[0], t.dims()[1]);
                        let mut d = Vec::with_capacity(r * c);
                        match axis {
                            Axis::Rows => {
                                d.extend_from_slice(&g.data()[offset * cols..(offset + r) * cols]);
                                offset += r;
                            }
                            Axis::Cols => {
                                for i in 0..r {
                                    let base = i * cols + offset;
                                    d.extend_from_slice(&g.data()[base..base + c]);
                                }
                                offset += c;
                            }
                        }
                        accumulate(&mut grads, *p, tensor(t.dims(), d));
                    }
                }
                Op::Slice(a, axis, start) => {
                    let t = self.value(*a);
                    let c = t.dims()[1];
                    let mut d = Tensor::zeros(t.dims());
                    let (gr, gc) = (g.dims()[0], g.dims()[1]);
                    for i in 0..gr {
                        for j in 0..gc {
                            let (ri, cj) = match axis {
                                Axis::Rows => (start + i, j),
                                Axis::Cols => (i, start + j),
                            };
                            d.data_mut()[ri * c + cj] = g.data()[i * gc + j];
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::Gather(a, indices) => {
                    let mut d = Tensor::zeros(self.value(*a).dims());
                    for (k, &i) in indices.iter().enumerate() {
                        d.data_mut()[i] += g.data()[k];
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::LogSumExp(a) => {
                    let t = self.value(*a);
                    let lse = node.value.data()[0];
                    let gv = g.data()[0];
                    accumulate(&mut grads, *a, t.map(|x| gv * libm::exp(x - lse)));
                }
                Op::Transpose(a) => {
                    accumulate(&mut grads, *a, g.transpose()?);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let (r, c) = (y.dims()[0], y.dims()[1]);
                    let mut d = Vec::with_capacity(r * c);
                    for i in 0..r {
                        let yr = &y.data()[i * c..(i + 1) * c];
                        let gr = &g.data()[i * c..(i + 1) * c];
                        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        d.extend(yr.iter().zip(gr).map(|(y, g)| y * (g - dot)));
                    }
                    accumulate(&mut grads, *a, tensor(y.dims(), d));
                }
                Op::LayerNorm(a, inv_std, degenerate) => {
                    let y = &node.value;
                    let (r, c) = (y.dims()[0], y.dims()[1]);
                    let n = c as f64;
                    let mut d = Vec::with_capacity(r * c);
                    for i in 0..r {
                        if degenerate[i] {
                            d.extend(core::iter::repeat_n(0.0, c));
                            continue;
                        }
                        let yr = &y.data()[i * c..(i + 1) * c];
                        let gr = &g.data()[i * c..(i + 1) * c];
                        let g_mean = gr.iter().sum::<f64>() / n;
                        let gy_mean = yr.iter().zip(gr).map(|(y, g)| y * g).sum::<f64>() / n;
                        d.extend(
                            yr.iter()
                                .zip(gr)
                                .map(|(y, g)| inv_std[i] * (g - g_mean - y * gy_mean)),
                        );
                    }
                    accumulate(&mut grads, *a, tensor(y.dims(), d));
                }
                Op::Map(a, df) => {
                    let d = zip(&g, self.value(*a), |g, x| g * df(x));
                    accumulate(&mut grads, *a, d);
                }
            }
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().clone()).collect(),
        })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Overflow-free `log Σ exp(v)`.
pub fn logsumexp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::EmptyInput { op: "logsumexp" });
    }
    let m = v.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    if m == f64::NEG_INFINITY {
        return Ok(m);
    }
    let s: f64 = v.iter().map(|&x| libm::exp(x - m)).sum();
    Ok(m + libm::log(s))
}

fn tensor(dims: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(dims, data).expect("gradient shape follows forward shape")
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    tensor(
        a.dims(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// `g · bᵀ` for `g: m x n`, `b: k x n`.
fn matmul_nt(g: &Tensor, b: &Tensor) -> Tensor {
    let (m, n) = (g.dims()[0], g.dims()[1]);
    let k = b.dims()[0];
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let gr = &g.data()[i * n..(i + 1) * n];
        for p in 0..k {
            let br = &b.data()[p * n..(p + 1) * n];
            out[i * k + p] = gr.iter().zip(br).map(|(x, y)| x * y).sum();
        }
    }
    tensor(&[m, k], out)
}

/// `aᵀ · g` for `a: m x k`, `g: m x n`.
fn matmul_tn(a: &Tensor, g: &Tensor) -> Tensor {
    let (m, k) = (a.dims()[0], a.dims()[1]);
    let n = g.dims()[1];
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let gr = &g.data()[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data()[i * k + p];
            if av == 0.0 {
                continue;
            }
            let dst = &mut out[p * n..(p + 1) * n];
            for (d, &gv) in dst.iter_mut().zip(gr) {
                *d += av * gv;
            }
        }
    }
    tensor(&[k, n], out)
}
