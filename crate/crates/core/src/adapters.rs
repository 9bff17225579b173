//! Fusion adapters mapping a token sequence to a bounded hazard score.
//!
//! The selective state-space adapter runs the recurrence
//!
//! ```text
//! h_1     = 0
//! u_n     = (sigmoid(t_n V_B + g) ⊙ t_n) G_B
//! h_{n+1} = A_d ⊙ h_n + u_n
//! y_n     = (sigmoid(t_n V_C + g) ⊙ h_{n+1}) G_C
//! ```
//!
//! over the tokens in order, with a frozen diagonal `A_d = exp(-exp(a_log))`
//! and gate bias `g`. MLP and single-head attention adapters serve as
//! baselines. All three end in the same risk head `3 tanh(y w + b)`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::encoders::{TokenSequence, NUM_TOKENS};
use crate::error::{Error, Result};
use crate::params::{uniform_init, Bound, Linear, ParamId, ParamStore};
use crate::tape::{Axis, Tape, Var};
use crate::tensor::Tensor;

/// Hazard scores lie strictly inside `(-RISK_BOUND, RISK_BOUND)`.
pub const RISK_BOUND: f64 = 3.0;

/// The head's pre-activation is clamped here so that `3 tanh` never rounds
/// to exactly ±3 in `f64`.
pub const HEAD_CLAMP: f64 = 18.0;

/// `a_log` is clamped to this range before forming `A_d`. At the lower end
/// `A_d` rounds to exactly 1.
pub const A_LOG_RANGE: (f64, f64) = (-40.0, 40.0);

/// Range of the log-spaced initial transition diagonal.
pub const A_INIT_RANGE: (f64, f64) = (0.5, 0.99);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AdapterKind {
    Mamba,
    Mlp,
    Attention,
}

impl AdapterKind {
    pub const ALL: [AdapterKind; 3] = [AdapterKind::Mlp, AdapterKind::Attention, AdapterKind::Mamba];

    pub fn name(self) -> &'static str {
        match self {
            AdapterKind::Mamba => "mamba",
            AdapterKind::Mlp => "mlp",
            AdapterKind::Attention => "attention",
        }
    }
}

impl fmt::Display for AdapterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AdapterKind {
    type Err = String;

    fn from_str(s: &str) -> core::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mamba" => Ok(AdapterKind::Mamba),
            "mlp" => Ok(AdapterKind::Mlp),
            "attention" | "transformer" => Ok(AdapterKind::Attention),
            _ => Err(format!("unknown adapter {s:?}")),
        }
    }
}

/// Which state the output map of the scan reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateReadout {
    /// `y_n` reads `h_{n+1}`, so each token influences its own output.
    PostUpdate,
    /// `y_n` reads `h_n`.
    PreUpdate,
}

/// How per-position outputs are reduced before the risk head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pooling {
    Last,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiskHeadParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl RiskHeadParams {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, d_in: usize) -> Self {
        let weight = store.add("head.weight", uniform_init(rng, d_in, 1), true);
        let bias = store.add("head.bias", Tensor::zeros(&[1, 1]), true);
        Self { weight, bias }
    }

    /// `3 tanh(clamp(y w + b))` for a `1 x d` row `y`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, y: Var) -> Result<Var> {
        let z = tape.matmul(y, bound.var(self.weight))?;
        let z = tape.add(z, bound.var(self.bias))?;
        let z = tape.clamp(z, -HEAD_CLAMP, HEAD_CLAMP);
        let t = tape.tanh(z);
        Ok(tape.scale(t, RISK_BOUND))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MambaAdapterParams {
    /// Frozen; `A_d = exp(-exp(a_log))`.
    pub a_log: ParamId,
    pub g_b: ParamId,
    pub v_b: ParamId,
    pub g_c: ParamId,
    pub v_c: ParamId,
    pub head: RiskHeadParams,
    pub gate_bias: f64,
    pub readout: StateReadout,
    pub pooling: Pooling,
}

#[derive(Clone, Debug)]
pub struct ScanOutput {
    /// Per-position outputs, `L x d_y`.
    pub y: Var,
    pub risk: Var,
    /// Recurrence steps executed.
    pub steps: usize,
}

impl MambaAdapterParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        d_joint: usize,
        d_h: usize,
        d_y: usize,
        gate_bias: f64,
    ) -> Self {
        let a_log = store.add("mamba.a_log", initial_a_log(d_h), false);
        let g_b = store.add("mamba.g_b", uniform_init(rng, d_joint, d_h), true);
        let v_b = store.add("mamba.v_b", uniform_init(rng, d_joint, d_joint), true);
        let g_c = store.add("mamba.g_c", uniform_init(rng, d_h, d_y), true);
        let v_c = store.add("mamba.v_c", uniform_init(rng, d_joint, d_h), true);
        let head = RiskHeadParams::new(store, rng, d_y);
        Self {
            a_log,
            g_b,
            v_b,
            g_c,
            v_c,
            head,
            gate_bias,
            readout: StateReadout::PostUpdate,
            pooling: Pooling::Last,
        }
    }

    /// Diagonal of the transition matrix.
    pub fn transition(&self, store: &ParamStore) -> Tensor {
        transition_from_log(store.get(self.a_log))
    }

    /// Runs the scan over every row of `tokens` (`L x d_joint`).
    pub fn scan(&self, tape: &mut Tape, bound: &Bound, store: &ParamStore, tokens: Var) -> Result<ScanOutput> {
        let (len, _) = tape.value(tokens).matrix_dims("mamba scan")?;
        let d_h = store.get(self.g_b).dims()[1];
        let a = tape.leaf(self.transition(store));
        let mut h = tape.leaf(Tensor::zeros(&[1, d_h]));
        let mut outputs = Vec::with_capacity(len);
        let mut steps = 0;
        for n in 0..len {
            let t = tape.slice(tokens, Axis::Rows, n, 1)?;

            let gate_in = tape.matmul(t, bound.var(self.v_b))?;
            let gate_in = tape.add_scalar(gate_in, self.gate_bias);
            let gate_in = tape.sigmoid(gate_in);
            let gated = tape.mul(gate_in, t)?;
            let u = tape.matmul(gated, bound.var(self.g_b))?;

            let carried = tape.mul(a, h)?;
            let next = tape.add(carried, u)?;

            let read = match self.readout {
                StateReadout::PostUpdate => next,
                StateReadout::PreUpdate => h,
            };
            let gate_out = tape.matmul(t, bound.var(self.v_c))?;
            let gate_out = tape.add_scalar(gate_out, self.gate_bias);
            let gate_out = tape.sigmoid(gate_out);
            let gated_h = tape.mul(gate_out, read)?;
            let y = tape.matmul(gated_h, bound.var(self.g_c))?;

            if !tape.value(next).is_finite() || !tape.value(y).is_finite() {
                return Err(Error::NonFiniteScan { step: n + 1 });
            }
            outputs.push(y);
            h = next;
            steps += 1;
        }
        let y = tape.concat(&outputs, Axis::Rows)?;
        let pooled = match self.pooling {
            Pooling::Last => *outputs.last().ok_or(Error::EmptyInput { op: "mamba scan" })?,
            Pooling::Mean => mean_rows(tape, y, len)?,
        };
        let risk = self.head.forward(tape, bound, pooled)?;
        Ok(ScanOutput { y, risk, steps })
    }
}

fn initial_a_log(d_h: usize) -> Tensor {
    let (lo, hi) = (libm::log(A_INIT_RANGE.0), libm::log(A_INIT_RANGE.1));
    let data = (0..d_h)
        .map(|k| {
            let frac = if d_h > 1 {
                k as f64 / (d_h - 1) as f64
            } else {
                0.0
            };
            let a = libm::exp(lo + frac * (hi - lo));
            libm::log(-libm::log(a))
        })
        .collect();
    Tensor::new(&[1, d_h], data).expect("sized by construction")
}

pub fn transition_from_log(a_log: &Tensor) -> Tensor {
    a_log.map(|x| {
        let x = x.clamp(A_LOG_RANGE.0, A_LOG_RANGE.1);
        libm::exp(-libm::exp(x))
    })
}

fn mean_rows(tape: &mut Tape, m: Var, rows: usize) -> Result<Var> {
    let w = tape.leaf(Tensor::full(&[1, rows], 1.0 / rows as f64));
    tape.matmul(w, m)
}

/// Concatenated tokens through a two-layer relu MLP.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MlpAdapterParams {
    pub hidden: Linear,
    pub output: Linear,
    pub head: RiskHeadParams,
}

impl MlpAdapterParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        d_joint: usize,
        d_hidden: usize,
        d_y: usize,
    ) -> Self {
        let hidden = Linear::new(store, rng, "mlp.hidden", NUM_TOKENS * d_joint, d_hidden);
        let output = Linear::new(store, rng, "mlp.output", d_hidden, d_y);
        let head = RiskHeadParams::new(store, rng, d_y);
        Self {
            hidden,
            output,
            head,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, tokens: Var) -> Result<Var> {
        let (rows, _) = tape.value(tokens).matrix_dims("mlp adapter")?;
        let parts: Vec<Var> = (0..rows)
            .map(|n| tape.slice(tokens, Axis::Rows, n, 1))
            .collect::<Result<_>>()?;
        let flat = tape.concat(&parts, Axis::Cols)?;
        let h = self.hidden.forward(tape, bound, flat)?;
        let h = tape.relu(h);
        let z = self.output.forward(tape, bound, h)?;
        self.head.forward(tape, bound, z)
    }
}

/// One head of scaled dot-product self-attention, mean-pooled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionAdapterParams {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub head: RiskHeadParams,
}

#[derive(Clone, Debug)]
pub struct AttentionOutput {
    /// Row-stochastic `L x L` attention matrix.
    pub weights: Var,
    pub risk: Var,
}

impl AttentionAdapterParams {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, d_joint: usize, d_k: usize) -> Self {
        let query = store.add("attention.query", uniform_init(rng, d_joint, d_k), true);
        let key = store.add("attention.key", uniform_init(rng, d_joint, d_k), true);
        let value = store.add("attention.value", uniform_init(rng, d_joint, d_k), true);
        let head = RiskHeadParams::new(store, rng, d_k);
        Self {
            query,
            key,
            value,
            head,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, tokens: Var) -> Result<AttentionOutput> {
        let (rows, _) = tape.value(tokens).matrix_dims("attention adapter")?;
        let q = tape.matmul(tokens, bound.var(self.query))?;
        let k = tape.matmul(tokens, bound.var(self.key))?;
        let v = tape.matmul(tokens, bound.var(self.value))?;
        let d_k = tape.value(k).dims()[1];
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, 1.0 / libm::sqrt(d_k as f64));
        let weights = tape.softmax_rows(scores)?;
        let attended = tape.matmul(weights, v)?;
        let pooled = mean_rows(tape, attended, rows)?;
        let risk = self.head.forward(tape, bound, pooled)?;
        Ok(AttentionOutput { weights, risk })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AdapterParams {
    Mamba(MambaAdapterParams),
    Mlp(MlpAdapterParams),
    Attention(AttentionAdapterParams),
}

impl AdapterParams {
    pub fn kind(&self) -> AdapterKind {
        match self {
            AdapterParams::Mamba(_) => AdapterKind::Mamba,
            AdapterParams::Mlp(_) => AdapterKind::Mlp,
            AdapterParams::Attention(_) => AdapterKind::Attention,
        }
    }

    pub fn head(&self) -> RiskHeadParams {
        match self {
            AdapterParams::Mamba(p) => p.head,
            AdapterParams::Mlp(p) => p.head,
            AdapterParams::Attention(p) => p.head,
        }
    }

    /// Records the `1 x 1` risk for a token matrix.
    pub fn risk_on_tape(&self, tape: &mut Tape, bound: &Bound, store: &ParamStore, tokens: Var) -> Result<Var> {
        match self {
            AdapterParams::Mamba(p) => Ok(p.scan(tape, bound, store, tokens)?.risk),
            AdapterParams::Mlp(p) => p.forward(tape, bound, tokens),
            AdapterParams::Attention(p) => Ok(p.forward(tape, bound, tokens)?.risk),
        }
    }
}

/// Mamba outputs `y` (`5 x d_y`) and the risk for one token sequence.
pub fn mamba_forward(
    tokens: &TokenSequence,
    params: &MambaAdapterParams,
    store: &ParamStore,
) -> Result<(Tensor, f64)> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let t = tape.leaf(tokens.tensor().clone());
    let out = params.scan(&mut tape, &bound, store, t)?;
    Ok((tape.value(out.y).clone(), tape.value(out.risk).data()[0]))
}

pub fn mlp_adapter_forward(tokens: &TokenSequence, params: &MlpAdapterParams, store: &ParamStore) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let t = tape.leaf(tokens.tensor().clone());
    let risk = params.forward(&mut tape, &bound, t)?;
    Ok(tape.value(risk).data()[0])
}

/// Risk and the attention matrix for one token sequence.
pub fn attention_adapter_forward(
    tokens: &TokenSequence,
    params: &AttentionAdapterParams,
    store: &ParamStore,
) -> Result<(f64, Tensor)> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let t = tape.leaf(tokens.tensor().clone());
    let out = params.forward(&mut tape, &bound, t)?;
    Ok((tape.value(out.risk).data()[0], tape.value(out.weights).clone()))
}

/// Dispatches to the forward pass matching `kind`.
pub fn predict_risk(
    tokens: &TokenSequence,
    kind: AdapterKind,
    params: &AdapterParams,
    store: &ParamStore,
) -> Result<f64> {
    if params.kind() != kind {
        return Err(Error::AdapterMismatch {
            kind,
            params: params.kind(),
        });
    }
    match params {
        AdapterParams::Mamba(p) => Ok(mamba_forward(tokens, p, store)?.1),
        AdapterParams::Mlp(p) => mlp_adapter_forward(tokens, p, store),
        AdapterParams::Attention(p) => Ok(attention_adapter_forward(tokens, p, store)?.0),
    }
}
