//! Dense row-major tensors and a tape-based reverse-mode autodiff engine.
//!
//! Everything is computed in `f64`. Tensor storage is reference counted so
//! binding parameters or cached encoder memories onto a fresh [`Tape`] is a
//! pointer copy.

mod grad_check;
mod optim;
mod params;
mod tape;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use grad_check::grad_check;
pub use optim::{noam_rate, AdamConfig, OptimizerState};
pub use params::{Init, ParamCounter, ParamId, ParamSink, ParamStore};
pub use tape::{Gradients, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("tensor", format!("dimensions must be positive, got {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data: Arc::new(data) })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: Arc::new(vec![value; n]) }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![1], data: Arc::new(vec![value]) }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("from_rows", "ragged rows"));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Copy-on-write access to the values.
    pub fn data_mut(&mut self) -> &mut Vec<f64> {
        Arc::make_mut(&mut self.data)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Size of the last axis.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.numel() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape)));
        }
        Ok(Tensor { shape, data: self.data.clone() })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data: Arc::new(data) }
    }
}

/// Boolean attention mask, `true` where attention is allowed.
///
/// Shape is `[rows, cols]` where `rows` is either the query count or 1, in
/// which case the single row is broadcast to every query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Result<Self> {
        if rows * cols != allowed.len() || rows == 0 || cols == 0 {
            return Err(Error::shape("mask", format!("{rows}x{cols} with {} entries", allowed.len())));
        }
        Ok(Mask { rows, cols, allowed })
    }

    pub fn open(rows: usize, cols: usize) -> Self {
        Mask { rows, cols, allowed: vec![true; rows * cols] }
    }

    /// Lower-triangular mask: query `i` sees keys `0..=i`.
    pub fn causal(n: usize) -> Self {
        let mut allowed = vec![false; n * n];
        for i in 0..n {
            for j in 0..=i {
                allowed[i * n + j] = true;
            }
        }
        Mask { rows: n, cols: n, allowed }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn allows(&self, query: usize, key: usize) -> bool {
        let r = if self.rows == 1 { 0 } else { query };
        self.allowed[r * self.cols + key]
    }
}

pub(crate) fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

/// Splits `shape` around `axis` into (outer, axis length, inner) strides.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Max-stabilized softmax along `axis`.
pub fn softmax(logits: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= logits.shape.len() {
        return Err(Error::shape("softmax", format!("axis {axis} for shape {:?}", logits.shape)));
    }
    check_finite("softmax input", logits.data())?;
    let (outer, len, inner) = axis_split(&logits.shape, axis);
    let x = logits.data();
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * len * inner + k * inner + i;
            let max = (0..len).map(|k| x[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for k in 0..len {
                let e = (x[at(k)] - max).exp();
                out[at(k)] = e;
                sum += e;
            }
            for k in 0..len {
                out[at(k)] /= sum;
            }
        }
    }
    Ok(Tensor::from_parts(logits.shape.clone(), out))
}
