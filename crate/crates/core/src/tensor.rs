//! Dense rank-3 tensors laid out as `(batch, channels, length)`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::real::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    dims: [usize; 3],
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(batch: usize, channels: usize, len: usize) -> Self {
        Self {
            dims: [batch, channels, len],
            data: vec![T::zero(); batch * channels * len],
        }
    }

    pub fn full(batch: usize, channels: usize, len: usize, value: T) -> Self {
        Self {
            dims: [batch, channels, len],
            data: vec![value; batch * channels * len],
        }
    }

    /// Panics if `data.len()` does not match the dimensions.
    pub fn from_vec(batch: usize, channels: usize, len: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), batch * channels * len, "tensor data length mismatch");
        Self {
            dims: [batch, channels, len],
            data,
        }
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self::zeros(other.dims[0], other.dims[1], other.dims[2])
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn scale(&mut self, factor: T) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.dims, other.dims);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    /// Row `(b, c)` as a contiguous slice over the length axis.
    pub fn row(&self, b: usize, c: usize) -> &[T] {
        let l = self.dims[2];
        let start = (b * self.dims[1] + c) * l;
        &self.data[start..start + l]
    }

    pub fn row_mut(&mut self, b: usize, c: usize) -> &mut [T] {
        let l = self.dims[2];
        let start = (b * self.dims[1] + c) * l;
        &mut self.data[start..start + l]
    }

    /// All channels of one batch element.
    pub fn sample(&self, b: usize) -> &[T] {
        let n = self.dims[1] * self.dims[2];
        &self.data[b * n..(b + 1) * n]
    }

    pub fn sample_mut(&mut self, b: usize) -> &mut [T] {
        let n = self.dims[1] * self.dims[2];
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64() * v.as_f64()).sum()
    }
}

impl<T> Tensor<T> {
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }
    pub fn batch(&self) -> usize {
        self.dims[0]
    }
    pub fn channels(&self) -> usize {
        self.dims[1]
    }
    pub fn len(&self) -> usize {
        self.dims[2]
    }
    pub fn numel(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<T> {
        self.data
    }
}
