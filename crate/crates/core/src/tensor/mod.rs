//! Minimal reverse-mode tensor engine.
//!
//! Values are dense row-major `f64` arrays of rank 0, 1 or 2. Operations are
//! recorded on a [`Tape`] and differentiated with [`Tape::backward`]. The
//! engine supports exactly what the recommender stack needs: elementwise
//! maps, dense and sparse-dense products, axis reductions, row gathers and
//! the pairwise-distance kernels used by distance correlation.

mod adam;
mod gradcheck;
mod sparse;
mod tape;

pub use adam::{Adam, AdamConfig, AdamState};
pub use gradcheck::{finite_difference_check, GradCheckReport, ParamCheck};
pub use sparse::SparseMatrix;
pub use tape::{Axis, ElementwiseKind, Gradients, ReduceKind, Tape, Var};

use thiserror::Error;

/// Epsilon added under every square root taken inside a loss.
pub const SQRT_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: value {value} at index {index} is outside the domain")]
    Domain {
        op: &'static str,
        index: usize,
        value: f64,
    },
    #[error("{op}: axis {axis:?} is invalid for shape {shape:?}")]
    InvalidAxis {
        op: &'static str,
        axis: Axis,
        shape: Vec<usize>,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("{op}: index {index} out of bounds for length {len}")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("gradient for parameter `{param}` contains NaN at index {index}")]
    NanGradient { param: String, index: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() || shape.len() > 2 {
            return Err(TensorError::ShapeMismatch {
                op: "tensor",
                left: shape,
                right: vec![values.len()],
            });
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            values: vec![0.0; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            values: vec![value],
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Self {
            shape: vec![values.len()],
            values,
        }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], values)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.values[i * n + i] = 1.0;
        }
        t
    }

    /// Matrix whose entries are drawn uniformly from `[-bound, bound]`.
    pub fn uniform<R: rand::Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let values = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self {
            shape: vec![rows, cols],
            values,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Row count of a matrix; a vector counts as one row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => 1,
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.values[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.values[r * c..(r + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols() + c]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.values[0]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Rounds every element to the nearest `f32`, the precision checkpoints
    /// store.
    pub fn round_to_f32(&mut self) {
        self.values.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }

    /// Appends the rows of `fill` below the existing rows.
    pub fn append_rows(&mut self, fill: &Tensor) -> Result<()> {
        if self.shape.len() != 2 || fill.cols() != self.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "append_rows",
                left: self.shape.clone(),
                right: fill.shape.clone(),
            });
        }
        self.values.extend_from_slice(&fill.values);
        self.shape[0] += fill.rows();
        Ok(())
    }
}

/// Row-vector matrix product used by forward-only code paths.
pub(crate) fn dense_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
