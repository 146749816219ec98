//! Reverse-mode automatic differentiation over dense row-major tensors.

mod attention;
mod check;
mod graph;
mod params;

use crate::error::{Error, Result};

pub use attention::{dense_attention, AttentionDropout, AttentionPlan, Segment};
pub use check::{finite_difference, relative_error, GradCheck, FD_EPSILON};
pub use graph::{dropout_mask, Gradients, Graph, Var};
pub use params::{
    load_checkpoint, save_checkpoint, Manifest, ParamId, ParamSet, TensorEntry, CHECKPOINT_VERSION,
};

#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

/// Forward pass of the attention primitive without dropout or taping.
pub fn attention_forward(
    plan: &AttentionPlan,
    q: &[Real],
    k: &[Real],
    v: &[Real],
    hidden: usize,
) -> Vec<Real> {
    attention::forward(plan, q, k, v, hidden, None).0
}

pub const DTYPE: &str = if cfg!(feature = "f32") { "f32" } else { "f64" };

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Real>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<Real>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> Real) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn scalar(v: Real) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<Real>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Real> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimensions flattened into rows, last dimension as columns.
    pub fn rows_cols(&self) -> (usize, usize) {
        rows_cols(&self.shape)
    }

    pub fn row(&self, i: usize) -> &[Real] {
        let (_, c) = self.rows_cols();
        &self.data[i * c..(i + 1) * c]
    }
}

pub(crate) fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (1, *n),
        [lead @ .., last] => (lead.iter().product(), *last),
    }
}
