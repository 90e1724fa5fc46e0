//! Dense real tensors in channel-major `C×H×W` layout.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{PdsError, Result};

/// Channel, height and width of an image-shaped tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(PdsError::InvalidArgument(format!(
                "shape dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        Ok(Shape { channels, height, width })
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of entries in one channel plane.
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn index(&self, c: usize, h: usize, w: usize) -> usize {
        (c * self.height + h) * self.width + w
    }

    /// Index of the point reflection `(c, -h mod H, -w mod W)`.
    #[inline]
    pub fn reflect(&self, idx: usize) -> usize {
        let plane = self.plane();
        let c = idx / plane;
        let rem = idx % plane;
        let h = rem / self.width;
        let w = rem % self.width;
        self.index(c, (self.height - h) % self.height, (self.width - w) % self.width)
    }

    pub fn ensure_eq(&self, other: &Shape) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(PdsError::ShapeMismatch { expected: *self, actual: *other })
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Tensor { shape, data: vec![0.0; shape.len()] }
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Tensor { shape, data: vec![value; shape.len()] }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(PdsError::InvalidArgument(format!(
                "data length {} does not match shape {shape} ({} entries)",
                data.len(),
                shape.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for h in 0..shape.height {
                for w in 0..shape.width {
                    data.push(f(c, h, w));
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.shape.index(c, h, w)]
    }

    pub fn set(&mut self, c: usize, h: usize, w: usize, value: f64) {
        let i = self.shape.index(c, h, w);
        self.data[i] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Element-wise combination of two equally shaped tensors.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.shape.ensure_eq(&other.shape)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor { shape: self.shape, data })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| k * v)
    }

    /// `self += k * other`
    pub fn axpy(&mut self, k: f64, other: &Tensor) -> Result<()> {
        self.shape.ensure_eq(&other.shape)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
        Ok(())
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.shape.ensure_eq(&other.shape)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Max-norm of the difference.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.shape.ensure_eq(&other.shape)?;
        Ok(self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Circular roll by `dh` rows and `dw` columns in every channel:
    /// `out(c, h, w) = x(c, h - dh, w - dw)`.
    pub fn roll(&self, dh: isize, dw: isize) -> Tensor {
        let s = self.shape;
        let sh = dh.rem_euclid(s.height as isize) as usize;
        let sw = dw.rem_euclid(s.width as isize) as usize;
        let mut out = Tensor::zeros(s);
        for c in 0..s.channels {
            for h in 0..s.height {
                let src_h = (h + s.height - sh) % s.height;
                for w in 0..s.width {
                    let src_w = (w + s.width - sw) % s.width;
                    out.data[s.index(c, h, w)] = self.data[s.index(c, src_h, src_w)];
                }
            }
        }
        out
    }

    /// Reorders coordinates: `out[i] = self[perm[i]]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        if perm.len() != self.len() {
            return Err(PdsError::InvalidArgument(format!(
                "permutation of length {} applied to tensor of length {}",
                perm.len(),
                self.len()
            )));
        }
        let data = perm.iter().map(|&p| self.data[p]).collect();
        Ok(Tensor { shape: self.shape, data })
    }
}
