//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! The engine is a single-threaded tape: [`Tape`] records every operation,
//! [`Tape::backward`] replays them in reverse topological order and
//! accumulates gradients at fan-out nodes. Everything is 64-bit and
//! row-major; there is no broadcasting beyond bias addition, which keeps
//! the backward rules auditable.
//!
//! Parameters live in a [`ParamSet`] (a named map of tensors) that can be
//! bound onto a tape as differentiable leaves and serialized with
//! [`write_container`] / [`read_container`].

mod attention;
mod container;
mod gradcheck;
mod tape;

pub use attention::{multi_head_self_attention, AttentionVars};
pub use container::{read_container, write_container, ParamSet};
pub use gradcheck::{grad_check, grad_check_default_eps, GradCheckReport};
pub use tape::{BoundParams, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dimension {axis} not divisible by {parts}")]
    NotDivisible { axis: usize, parts: usize },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("index {index} out of range for size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("container format error: {0}")]
    Container(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense row-major f64 tensor. Immutable once handed to a tape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build from raw parts. Fails when `data.len() != product(shape)` or
    /// any value is non-finite.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::ShapeMismatch(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: "from_vec" });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Row-major matrix wrapper, `rows * cols` elements.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_vec(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// 2-D accessor; panics on rank != 2 (internal use keeps ranks straight).
    pub fn dims2(&self) -> (usize, usize) {
        assert_eq!(self.shape.len(), 2, "expected rank-2 tensor");
        (self.shape[0], self.shape[1])
    }
}
