//! Multi-modal survival modelling without the standard library.
//!
//! Precomputed per-modality embeddings are projected into a joint token
//! space by modality encoders, fused by a selective state-space adapter (or
//! an MLP / attention baseline) into a bounded hazard score, and trained with
//! the Cox partial likelihood. Survival curves come from a Breslow baseline
//! hazard; predictions are scored with Harrell's concordance index.
//!
//! Everything runs on a small tape-based reverse-mode autodiff engine over
//! dense `f64` tensors. The crate needs only `alloc`; file formats and the
//! command line live in the `survfuse` crate.

#![no_std]

extern crate alloc;

pub mod adapters;
pub mod data;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod params;
pub mod survival;
pub mod synthetic;
pub mod tape;
pub mod tensor;
pub mod training;

pub use adapters::{AdapterKind, AdapterParams, Pooling, StateReadout};
pub use data::{Cohort, EmbeddingBundle, ModalityId, PatientRecord, Split, SplitFractions};
pub use error::{Error, Result};
pub use evaluation::{concordance_index, MetricReport};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
pub use training::{ModelCheckpoint, TrainConfig};
