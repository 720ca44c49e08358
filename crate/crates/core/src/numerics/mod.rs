//! Dense arrays, a reverse-mode tape, and a finite-difference gradient
//! checker.

mod array;
mod gradcheck;
mod graph;
mod params;

pub use array::{elementwise, layer_norm, matmul, sigmoid_scalar, softmax, Array, Elementwise, LAYER_NORM_EPS};
pub use gradcheck::{
    compare_gradients, grad_check, relative_error, EntryCheck, GradCheckConfig, GradCheckReport, TensorCheck,
};
pub use graph::{Graph, Var, LOG_CLAMP};
pub use params::{Gradients, ParamId, ParameterStore};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapeError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Mismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    Invalid { shape: Vec<usize>, reason: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}
