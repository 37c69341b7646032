//! A small reverse-mode differentiable tensor engine.
//!
//! Values are dense 4-D arrays laid out row-major over `(n, c, h, w)`. A
//! [`Graph`] records every operation applied during a forward pass and
//! replays them in reverse to produce gradients. Trainable weights live in a
//! [`ParamStore`] outside the graph so one graph can be discarded per step.

mod conv;
mod gemm;
pub mod gradcheck;
mod graph;
mod norm;
mod ops;
pub mod optim;
mod param;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use conv::{conv2d_output_size, conv_transpose2d_output_size};
pub use graph::{Gradients, Graph, Var};
pub use norm::{BatchNormMode, RunningStats, BN_EPS, BN_MOMENTUM};
pub use param::{he_uniform, Buffer, BufferId, ParamId, ParamStore, Parameter};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {dim} is {got}, expected {expected}")]
    ShapeMismatch {
        op: &'static str,
        dim: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("{op}: output size would be {got} along {dim}")]
    NonPositiveOutput {
        op: &'static str,
        dim: &'static str,
        got: i64,
    },
    #[error("data length {len} does not match shape {shape}")]
    DataLength { len: usize, shape: Shape },
    #[error("backward requires a scalar loss, got shape {0}")]
    NonScalarLoss(Shape),
    #[error("mse_loss: mask has no valid elements")]
    EmptyMask,
    #[error("batchnorm: eval mode without running statistics")]
    MissingRunningStats,
    #[error("batchnorm: eps must be positive, got {0}")]
    InvalidEps(f64),
    #[error("parameter {0:?} has no gradient")]
    MissingGrad(String),
    #[error("duplicate parameter name {0:?}")]
    DuplicateName(String),
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
    #[error("loss function is not deterministic: {first} vs {second}")]
    NonDeterministic { first: f64, second: f64 },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Extent of a tensor: batch, channels, height, width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn scalar() -> Self {
        Self::new(1, 1, 1, 1)
    }

    /// A length-`len` vector stored along the channel axis.
    pub const fn vector(len: usize) -> Self {
        Self::new(1, len, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense tensor with an optional gradient slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape,
            });
        }
        Ok(Self {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.numel()],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(Shape::scalar(), value)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize) -> f64) -> Self {
        Self {
            shape,
            data: (0..shape.numel()).map(&mut f).collect(),
            grad: None,
            requires_grad: false,
        }
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub(crate) fn grad_slot(&mut self) -> &mut Option<Vec<f64>> {
        &mut self.grad
    }

    pub fn set_grad(&mut self, grad: Option<Vec<f64>>) -> Result<()> {
        if let Some(g) = &grad {
            if g.len() != self.data.len() {
                return Err(TensorError::DataLength {
                    len: g.len(),
                    shape: self.shape,
                });
            }
        }
        self.grad = grad;
        Ok(())
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        let s = self.shape;
        self.data[((n * s.c + c) * s.h + h) * s.w + w]
    }

    /// Same data viewed with a different shape of equal size.
    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.shape.numel() {
            return Err(TensorError::DataLength {
                len: self.data.len(),
                shape,
            });
        }
        self.shape = shape;
        if self.grad.is_some() {
            self.grad = None;
        }
        Ok(self)
    }

    /// Copy of batch element `i` as a batch of one.
    pub fn batch_item(&self, i: usize) -> Tensor {
        let per = self.shape.c * self.shape.plane();
        Tensor {
            shape: Shape::new(1, self.shape.c, self.shape.h, self.shape.w),
            data: self.data[i * per..(i + 1) * per].to_vec(),
            grad: None,
            requires_grad: false,
        }
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| TensorError::Invalid("stack of zero tensors".into()))?
            .shape;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        let mut n = 0;
        for t in items {
            let s = t.shape;
            if (s.c, s.h, s.w) != (first.c, first.h, first.w) {
                return Err(TensorError::ShapeMismatch {
                    op: "stack",
                    dim: "item shape",
                    got: s.c * s.h * s.w,
                    expected: first.c * first.h * first.w,
                });
            }
            n += s.n;
            data.extend_from_slice(&t.data);
        }
        Tensor::new(Shape::new(n, first.c, first.h, first.w), data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise sum of products with another tensor of the same size.
    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}
