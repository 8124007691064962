//! Dense 4-D tensor value type.
//!
//! Every value flowing through the networks, losses and the raw pipeline is a
//! `Tensor`: a row-major `(n, c, h, w)` array of `f32` with an optional
//! gradient buffer of the same shape. There is no broadcasting beyond scalar
//! arguments to the dedicated scalar ops; all shape alignment is explicit.

use crate::error::{Error, Result};
use std::fmt;

/// Shape of a 4-D tensor: batch, channels, height, width.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    /// Shape of a scalar value.
    pub fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// Flat index of element `(n, c, h, w)`.
    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.c, self.h, self.w)
    }
}

/// Dense `(n, c, h, w)` array of `f32` with an optional same-shape gradient.
#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
    requires_grad: bool,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    /// Builds a tensor from raw data. The data length must equal the product
    /// of the shape dimensions.
    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::Invalid {
                op: "Tensor::from_vec",
                what: format!("data length {} does not match shape {shape}", data.len()),
            });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.numel()],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
            requires_grad: false,
            grad: None,
        }
    }

    /// Scalar tensor of shape `(1,1,1,1)`.
    pub fn scalar(value: f32) -> Self {
        Tensor::full(Shape::scalar(), value)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    /// Marks this tensor as a differentiation leaf.
    pub fn requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn needs_grad(&self) -> bool {
        self.requires_grad
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f32 {
        self.data[self.shape.index(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, value: f32) {
        let i = self.shape.index(n, c, h, w);
        self.data[i] = value;
    }

    /// The scalar value of a `(1,1,1,1)` tensor.
    pub fn item(&self) -> Result<f32> {
        if !self.shape.is_scalar() {
            return Err(Error::NotScalar { shape: self.shape });
        }
        Ok(self.data[0])
    }

    /// Accumulated gradient, if any.
    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    /// Adds `delta` into the gradient buffer, allocating zeros on first use.
    pub fn accumulate_grad(&mut self, delta: &[f32]) {
        debug_assert_eq!(delta.len(), self.data.len());
        let grad = self.grad.get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// True if every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise map into a new tensor (no gradient tracking).
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    /// Clamps every element into `[lo, hi]`.
    pub fn clamp(&self, lo: f32, hi: f32) -> Tensor {
        self.map(|v| v.clamp(lo, hi))
    }

    /// Mirror along the vertical axis (reverses the `w` index).
    pub fn flip_lr(&self) -> Tensor {
        Tensor::from_fn(self.shape, |n, c, h, w| {
            self.at(n, c, h, self.shape.w - 1 - w)
        })
    }

    /// Mirror along the horizontal axis (reverses the `h` index).
    pub fn flip_ud(&self) -> Tensor {
        Tensor::from_fn(self.shape, |n, c, h, w| {
            self.at(n, c, self.shape.h - 1 - h, w)
        })
    }

    /// Swaps the two spatial axes.
    pub fn transpose_hw(&self) -> Tensor {
        let s = Shape::new(self.shape.n, self.shape.c, self.shape.w, self.shape.h);
        Tensor::from_fn(s, |n, c, h, w| self.at(n, c, w, h))
    }

    /// Spatial crop of size `(ch, cw)` at offset `(y0, x0)`.
    pub fn crop_at(&self, y0: usize, x0: usize, ch: usize, cw: usize) -> Result<Tensor> {
        if y0 + ch > self.shape.h || x0 + cw > self.shape.w || ch == 0 || cw == 0 {
            return Err(Error::Invalid {
                op: "Tensor::crop_at",
                what: format!(
                    "crop {ch}x{cw} at ({y0},{x0}) out of bounds for {}",
                    self.shape
                ),
            });
        }
        let s = Shape::new(self.shape.n, self.shape.c, ch, cw);
        Ok(Tensor::from_fn(s, |n, c, h, w| {
            self.at(n, c, y0 + h, x0 + w)
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        let shape = Shape::new(1, 1, 2, 2);
        assert!(Tensor::from_vec(shape, vec![0.0; 4]).is_ok());
        assert!(Tensor::from_vec(shape, vec![0.0; 3]).is_err());
    }

    #[test]
    fn indexing_is_row_major() {
        let t = Tensor::from_fn(Shape::new(2, 3, 4, 5), |n, c, h, w| {
            (((n * 3 + c) * 4 + h) * 5 + w) as f32
        });
        for (i, v) in t.data().iter().enumerate() {
            assert_eq!(*v, i as f32);
        }
        assert_eq!(t.at(1, 2, 3, 4), 119.0);
    }

    #[test]
    fn grad_accumulates() {
        let mut t = Tensor::zeros(Shape::new(1, 1, 1, 2)).requires_grad(true);
        t.accumulate_grad(&[1.0, 2.0]);
        t.accumulate_grad(&[0.5, 0.5]);
        assert_eq!(t.grad().unwrap(), &[1.5, 2.5]);
    }

    #[test]
    fn item_rejects_non_scalar() {
        let t = Tensor::zeros(Shape::new(1, 1, 2, 1));
        assert!(t.item().is_err());
        assert_eq!(Tensor::scalar(3.5).item().unwrap(), 3.5);
    }
}
