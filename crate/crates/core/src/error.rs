use alloc::string::String;

use crate::data::ModalityId;
use crate::tensor::Shape;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("tensor of shape {shape} needs {} values, got {len}", shape.numel())]
    DataLength { shape: Shape, len: usize },

    #[error("{op}: expected a matrix, got shape {shape}")]
    Rank { op: &'static str, shape: Shape },

    #[error("{op}: incompatible shapes {lhs} and {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },

    #[error("{op}: index range {start}..{end} out of bounds for shape {shape}")]
    OutOfRange {
        op: &'static str,
        start: usize,
        end: usize,
        shape: Shape,
    },

    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },

    #[error("backward: output must be a scalar, got shape {shape}")]
    NonScalarOutput { shape: Shape },

    #[error("gradient check: objective is not finite at coordinate {coordinate} of parameter {param}")]
    NonFiniteObjective { param: usize, coordinate: usize },

    #[error("gradient check: step {0} outside [1e-7, 1e-3]")]
    BadStep(f64),

    #[error("state-space scan produced a non-finite value at step {step}")]
    NonFiniteScan { step: usize },

    #[error("record {id}: missing modality {modality}")]
    MissingModality { id: String, modality: ModalityId },

    #[error("record {id}: modality {modality} has non-finite entries")]
    NonFiniteEmbedding { id: String, modality: ModalityId },

    #[error(
        "modality {modality} dimension differs between records {first} ({expected}) and {second} ({found})"
    )]
    InconsistentDimension {
        modality: ModalityId,
        first: String,
        expected: usize,
        second: String,
        found: usize,
    },

    #[error("modality {modality}: expected dimension {expected}, got {found}")]
    DimensionMismatch {
        modality: ModalityId,
        expected: usize,
        found: usize,
    },

    #[error("record {id}: {reason}")]
    InvalidRecord { id: String, reason: String },

    #[error("duplicate record id {0}")]
    DuplicateId(String),

    #[error("{what}: length mismatch ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("split {split} would receive no records")]
    EmptySplit { split: &'static str },

    #[error("cohort has no split assignment")]
    MissingSplit,

    #[error("invalid fractions: {0}")]
    InvalidFractions(String),

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("invalid training config: {0}")]
    InvalidConfig(String),

    #[error("concordance: no comparable pairs")]
    NoComparablePairs,

    #[error("{0}: no observed events")]
    NoEvents(&'static str),

    #[error("adapter kind {kind} does not match parameters for {params}")]
    AdapterMismatch {
        kind: crate::adapters::AdapterKind,
        params: crate::adapters::AdapterKind,
    },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("horizon {0} is negative")]
    NegativeHorizon(f64),

    #[error("parameter {name}: {reason}")]
    Parameter { name: String, reason: String },
}
