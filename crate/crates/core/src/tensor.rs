//! Dense row-major f64 tensors. Image tensors use the `[batch, channels,
//! height, width]` layout convention.

use crate::error::{Error, Result};

/// Dense n-dimensional array of 64-bit floats.
///
/// Plain value type: construction validates that the element count matches
/// the shape and that every value is finite. Gradients live on the [`Tape`],
/// not here, so tensors stay `Send + Sync` and can move between threads.
///
/// [`Tape`]: crate::tape::Tape
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor from a flat row-major buffer, validating element count
    /// and finiteness.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ElementCount { shape, expected, got: data.len() });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { context: "Tensor::from_vec" });
        }
        Ok(Tensor { shape, data })
    }

    /// Internal constructor for values produced by finite-preserving kernels.
    pub(crate) fn from_vec_unchecked(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![value; n] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::NotScalar { context: "Tensor::item", shape: self.shape.clone() })
        }
    }

    /// Interpret as `[batch, channels, height, width]`.
    pub fn dims4(&self, context: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.shape.as_slice() {
            &[b, c, h, w] => Ok((b, c, h, w)),
            _ => Err(Error::RankMismatch { context, expected: 4, got: self.shape.clone() }),
        }
    }

    /// Interpret as `[rows, cols]`.
    pub fn dims2(&self, context: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            _ => Err(Error::RankMismatch { context, expected: 2, got: self.shape.clone() }),
        }
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Maximum element. Errors on empty tensors.
    pub fn max_value(&self) -> Result<f64> {
        self.data
            .iter()
            .copied()
            .fold(None, |acc, v| Some(acc.map_or(v, |m: f64| m.max(v))))
            .ok_or(Error::EmptyInput { context: "Tensor::max_value" })
    }

    pub fn min_value(&self) -> Result<f64> {
        self.data
            .iter()
            .copied()
            .fold(None, |acc, v| Some(acc.map_or(v, |m: f64| m.min(v))))
            .ok_or(Error::EmptyInput { context: "Tensor::min_value" })
    }

    /// Elementwise `self + scale * other`.
    pub fn axpy(&self, scale: f64, other: &Tensor) -> Result<Tensor> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch {
                context: "Tensor::axpy",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + scale * b)
            .collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    pub fn scaled(&self, scale: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * scale).collect(),
        }
    }

    /// Reshape without copying. The element count must be preserved.
    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::ElementCount { shape, expected, got: self.data.len() });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Fill with uniform values in `(-bound, bound)` from the given RNG.
    pub fn fill_uniform(&mut self, rng: &mut crate::rng::Rng, bound: f64) {
        for v in &mut self.data {
            *v = rng.next_symmetric(bound);
        }
    }
}
