//! A small reverse-mode automatic differentiation engine.
//!
//! Values live in [`Tensor`]s (row-major `f64` arrays). A [`Graph`] records
//! every operation executed on it and can later run [`Graph::backward`] from a
//! scalar loss, visiting the recorded operations in exact reverse order.
//!
//! The op set is deliberately narrow: it covers what the grasp network needs
//! (convolution, dense layers, instance/layer normalization, ReLU, sigmoid,
//! channel concatenation, spatial tiling, gradient reversal and binary
//! cross-entropy) plus a handful of elementwise helpers used by tests.
//!
//! ```
//! use graspda::tensor::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::scalar(3.0), true);
//! let y = g.mul(x, x).unwrap();
//! g.backward(y).unwrap();
//! assert_eq!(g.grad(x).unwrap().values(), &[6.0]);
//! ```

mod conv;
mod gradcheck;
mod graph;
mod norm;
mod optim;

#[cfg(test)]
mod grad_tests;

pub use conv::{conv_output_extent, Padding};
pub use gradcheck::{check_gradients, finite_difference_check, GradCheckReport};
pub use graph::{Graph, Mode, Var};
pub use norm::NormMode;
pub use optim::{sgd_momentum_step, Gradients, OptimizerState, ParamSet};

use thiserror::Error;

/// Probabilities are clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch in {dim}: expected {expected}, found {found}")]
    ShapeMismatch {
        op: &'static str,
        dim: String,
        expected: usize,
        found: usize,
    },
    #[error("{op}: expected rank {expected}, found rank {found}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("tensor shape {shape:?} holds {expected} values but {found} were given")]
    ValueCount {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },
    #[error("normalization epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("binary cross-entropy label {0} is not 0 or 1")]
    InvalidLabel(f64),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("no gradient available for parameter `{0}`")]
    MissingGradient(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense n-dimensional array of `f64`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::ValueCount {
                shape,
                expected,
                found: values.len(),
            });
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            values: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            values: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            values: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.values.len() == 1).then(|| self.values[0])
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.values.len() {
            return Err(TensorError::ValueCount {
                shape: shape.to_vec(),
                expected: n,
                found: self.values.len(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Concatenate tensors along their leading (batch) axis.
    pub fn concat_batch(parts: &[&Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat_batch of zero tensors".into()))?;
        let inner = &first.shape[1..];
        let mut batch = 0;
        let mut values = Vec::new();
        for p in parts {
            if &p.shape[1..] != inner {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_batch",
                    dim: "trailing extents".into(),
                    expected: inner.iter().product(),
                    found: p.shape[1..].iter().product(),
                });
            }
            batch += p.shape[0];
            values.extend_from_slice(&p.values);
        }
        let mut shape = vec![batch];
        shape.extend_from_slice(inner);
        Ok(Self { shape, values })
    }
}
