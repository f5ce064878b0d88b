//! Dense NCHW tensors of `f64`.
//!
//! [`Tensor4`] is the single carrier for activations and gradients. Storage is
//! row-major with the batch index outermost, so the flat offset of
//! `(b, c, h, w)` is `((b * C + c) * H + h) * W + w`.

use std::fmt;

use crate::error::{shape_err, Error, Result};

/// The four extents of a [`Tensor4`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub const fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Dims { batch, channels, height, width }
    }

    /// Total number of elements.
    pub const fn len(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    /// True when any dimension is zero (never the case for a valid `Dims`).
    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one batch item.
    pub const fn item_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Elements in one channel plane.
    pub const fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub const fn as_array(&self) -> [usize; 4] {
        [self.batch, self.channels, self.height, self.width]
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().contains(&0) {
            return shape_err(format!("all dims must be >= 1, got {self}"));
        }
        Ok(())
    }

    /// Same dims with a different batch size.
    pub const fn with_batch(&self, batch: usize) -> Self {
        Dims { batch, ..*self }
    }
}

impl From<(usize, usize, usize, usize)> for Dims {
    fn from((b, c, h, w): (usize, usize, usize, usize)) -> Self {
        Dims::new(b, c, h, w)
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.batch, self.channels, self.height, self.width)
    }
}

/// Dense 4-D array in NCHW layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    dims: Dims,
    data: Vec<f64>,
}

impl Tensor4 {
    /// A tensor with every element equal to `value`.
    pub fn new_filled(dims: impl Into<Dims>, value: f64) -> Result<Self> {
        let dims = dims.into();
        dims.validate()?;
        Ok(Tensor4 { dims, data: vec![value; dims.len()] })
    }

    pub fn zeros(dims: impl Into<Dims>) -> Result<Self> {
        Self::new_filled(dims, 0.0)
    }

    /// Wraps an existing buffer; its length must match `dims`.
    pub fn from_vec(dims: impl Into<Dims>, data: Vec<f64>) -> Result<Self> {
        let dims = dims.into();
        dims.validate()?;
        if data.len() != dims.len() {
            return shape_err(format!("buffer of length {} does not fit dims {dims}", data.len()));
        }
        Ok(Tensor4 { dims, data })
    }

    pub(crate) fn zeros_unchecked(dims: Dims) -> Self {
        debug_assert!(dims.validate().is_ok());
        Tensor4 { dims, data: vec![0.0; dims.len()] }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Flat offset of `(b, c, h, w)`.
    pub fn offset(&self, b: usize, c: usize, h: usize, w: usize) -> Result<usize> {
        let d = self.dims;
        if b >= d.batch || c >= d.channels || h >= d.height || w >= d.width {
            return Err(Error::Index { b, c, h, w, dims: d.as_array() });
        }
        Ok(((b * d.channels + c) * d.height + h) * d.width + w)
    }

    pub fn get(&self, b: usize, c: usize, h: usize, w: usize) -> Result<f64> {
        Ok(self.data[self.offset(b, c, h, w)?])
    }

    pub fn set(&mut self, b: usize, c: usize, h: usize, w: usize, value: f64) -> Result<()> {
        let i = self.offset(b, c, h, w)?;
        self.data[i] = value;
        Ok(())
    }

    /// The contiguous values of batch item `b`.
    pub fn item(&self, b: usize) -> &[f64] {
        let n = self.dims.item_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn item_mut(&mut self, b: usize) -> &mut [f64] {
        let n = self.dims.item_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    /// Reinterprets the buffer under new dims with the same element count.
    pub fn reshape(self, dims: impl Into<Dims>) -> Result<Self> {
        let dims = dims.into();
        dims.validate()?;
        if dims.len() != self.data.len() {
            return shape_err(format!("cannot reshape {} into {dims}", self.dims));
        }
        Ok(Tensor4 { dims, data: self.data })
    }

    /// Copies the listed batch items, in order, into a new tensor.
    pub fn gather_items(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return shape_err("cannot gather an empty batch");
        }
        let n = self.dims.item_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            if i >= self.dims.batch {
                return shape_err(format!("batch index {i} out of range for {} items", self.dims.batch));
            }
            data.extend_from_slice(self.item(i));
        }
        Ok(Tensor4 { dims: self.dims.with_batch(indices.len()), data })
    }

    pub fn add(&self, other: &Tensor4) -> Result<Tensor4> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor4) -> Result<Tensor4> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor4) -> Result<Tensor4> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, factor: f64) -> Tensor4 {
        self.map(|v| v * factor)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor4 {
        Tensor4 { dims: self.dims, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Sum of elementwise products; dims must match.
    pub fn dot(&self, other: &Tensor4) -> Result<f64> {
        self.check_same_dims(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn max_abs_diff(&self, other: &Tensor4) -> Result<f64> {
        self.check_same_dims(other, "max_abs_diff")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_same_dims(&self, other: &Tensor4, op: &str) -> Result<()> {
        if self.dims != other.dims {
            return shape_err(format!("{op}: dims {} and {} differ", self.dims, other.dims));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Tensor4, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor4> {
        self.check_same_dims(other, op)?;
        Ok(Tensor4 { dims: self.dims, data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect() })
    }
}
