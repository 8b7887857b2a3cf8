//! Reverse-mode automatic differentiation: tensors, the computation graph,
//! and a finite-difference gradient checker.

pub mod gradcheck;
pub mod graph;
pub mod tensor;

pub use gradcheck::{grad_check, DEFAULT_STEP, DEFAULT_TOLERANCE};
pub use graph::Var;
pub use tensor::Tensor;

/// Errors raised by tensor construction and graph operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape {shape:?} implies {} elements, data has {len}", shape.iter().product::<usize>())]
    ShapeDataMismatch { shape: Vec<usize>, len: usize },

    #[error("tensors of rank {rank} are not supported (max 3)")]
    RankUnsupported { rank: usize },

    #[error("non-finite value {value} in external input")]
    NonFiniteInput { value: f64 },

    #[error("{op}: incompatible shapes ({detail})")]
    DimensionMismatch { op: &'static str, detail: String },

    #[error("operation requires at least one input")]
    EmptyInput,

    #[error("tensor of shape {shape:?} is not a scalar")]
    NonScalar { shape: Vec<usize> },

    #[error("backward requires a scalar root, found shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },

    #[error("{op}: index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("function under gradient check is not deterministic ({first} vs {second})")]
    NonDeterministicFunction { first: f64, second: f64 },

    #[error("finite-difference step must be positive, got {step}")]
    NonPositiveStep { step: f64 },
}
