//! Modality encoders projecting foundation-model embeddings into a shared
//! token space.
//!
//! One radiology MLP is applied independently to each of the four MRI
//! contrasts, a second MLP handles the pathology embedding. Every token is
//! layer-normalized and passed through its encoder's learnable scale/shift.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::data::{EmbeddingBundle, ModalityId};
use crate::error::{Error, Result};
use crate::params::{Bound, Linear, ParamId, ParamStore};
use crate::tape::{Axis, Tape, Var};
use crate::tensor::Tensor;

/// Number of tokens in a fused sequence.
pub const NUM_TOKENS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderDims {
    pub d_rad: usize,
    pub d_path: usize,
    pub d_hidden: usize,
    pub d_joint: usize,
}

/// Two-layer relu MLP followed by token normalization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModalityEncoder {
    pub hidden: Linear,
    pub output: Linear,
    pub norm_scale: ParamId,
    pub norm_shift: ParamId,
    pub d_in: usize,
}

impl ModalityEncoder {
    fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        d_in: usize,
        d_hidden: usize,
        d_joint: usize,
    ) -> Self {
        let hidden = Linear::new(store, rng, &format!("{name}.hidden"), d_in, d_hidden);
        let output = Linear::new(store, rng, &format!("{name}.output"), d_hidden, d_joint);
        let norm_scale = store.add(
            format!("{name}.norm.scale"),
            Tensor::full(&[1, d_joint], 1.0),
            true,
        );
        let norm_shift = store.add(format!("{name}.norm.shift"), Tensor::zeros(&[1, d_joint]), true);
        Self {
            hidden,
            output,
            norm_scale,
            norm_shift,
            d_in,
        }
    }

    fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, bound, x)?;
        let h = tape.relu(h);
        let o = self.output.forward(tape, bound, h)?;
        let n = tape.layer_norm_rows(o)?;
        let scaled = tape.mul(n, bound.var(self.norm_scale))?;
        tape.add(scaled, bound.var(self.norm_shift))
    }
}

/// Parameters of both modality encoders.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderParams {
    pub rad: ModalityEncoder,
    pub path: ModalityEncoder,
    pub dims: EncoderDims,
}

impl EncoderParams {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, dims: EncoderDims) -> Self {
        let rad = ModalityEncoder::new(store, rng, "encoder.rad", dims.d_rad, dims.d_hidden, dims.d_joint);
        let path =
            ModalityEncoder::new(store, rng, "encoder.path", dims.d_path, dims.d_hidden, dims.d_joint);
        Self { rad, path, dims }
    }

    fn check(&self, bundle: &EmbeddingBundle) -> Result<()> {
        for m in ModalityId::ALL {
            let expected = if m.is_radiology() {
                self.dims.d_rad
            } else {
                self.dims.d_path
            };
            let found = bundle.get(m).len();
            if found != expected {
                return Err(Error::DimensionMismatch {
                    modality: m,
                    expected,
                    found,
                });
            }
        }
        Ok(())
    }

    /// Records the encoding of `bundle` and returns the `5 x d_joint` token
    /// matrix in `[T1, T1PC, T2, FLAIR, PATH]` order.
    pub fn encode_on_tape(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        bundle: &EmbeddingBundle,
    ) -> Result<Var> {
        self.check(bundle)?;
        let mut tokens = Vec::with_capacity(NUM_TOKENS);
        for m in ModalityId::ALL {
            let x = tape.leaf(Tensor::row(bundle.get(m)));
            let enc = if m.is_radiology() { &self.rad } else { &self.path };
            tokens.push(enc.forward(tape, bound, x)?);
        }
        tape.concat(&tokens, Axis::Rows)
    }
}

/// Joint-space tokens of one patient, `5 x d_joint`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence(Tensor);

impl TokenSequence {
    pub fn new(tokens: Tensor) -> Result<Self> {
        let (rows, _) = tokens.matrix_dims("token sequence")?;
        if rows != NUM_TOKENS {
            return Err(Error::ShapeMismatch {
                op: "token sequence",
                lhs: tokens.shape().clone(),
                rhs: crate::tensor::Shape(alloc::vec![NUM_TOKENS, tokens.dims()[1]]),
            });
        }
        Ok(Self(tokens))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn token(&self, m: ModalityId) -> &[f64] {
        let d = self.0.dims()[1];
        &self.0.data()[m.index() * d..(m.index() + 1) * d]
    }

    pub fn d_joint(&self) -> usize {
        self.0.dims()[1]
    }
}

/// Encodes one patient outside of training.
pub fn encode_patient(
    bundle: &EmbeddingBundle,
    params: &EncoderParams,
    store: &ParamStore,
) -> Result<TokenSequence> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let tokens = params.encode_on_tape(&mut tape, &bound, bundle)?;
    TokenSequence::new(tape.value(tokens).clone())
}
