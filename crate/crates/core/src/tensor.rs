//! Dense row-major real tensors and the two-channel complex image.
//!
//! A complex image of size H×W is a `[2, H, W]` tensor: channel 0 holds the
//! real part, channel 1 the imaginary part. Every layer in the network works
//! on this real representation directly.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{param_err, shape_err, Result};

/// Storage precision of a tensor. The discriminant is the on-disk code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Precision {
    F32 = 4,
    F64 = 8,
}

impl Precision {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            4 => Some(Precision::F32),
            8 => Some(Precision::F64),
            _ => None,
        }
    }

    pub fn byte_width(self) -> usize {
        self as usize
    }
}

/// Real scalar type usable throughout the engine (`f32` or `f64`).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const PRECISION: Precision;

    /// Lossy conversion from `f64`.
    fn of(x: f64) -> Self;

    fn as_f64(self) -> f64;

    fn write_le(self, out: &mut Vec<u8>);

    /// Reads one value from the start of `bytes`; the slice must hold at
    /// least `PRECISION.byte_width()` bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::F32;

    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::F64;

    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(shape_err("empty shape list"));
    }
    if shape.contains(&0) {
        return Err(shape_err(format!("zero dimension in shape {shape:?}")));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| shape_err(format!("shape {shape:?} overflows usize")))
}

impl<T: Scalar> Tensor<T> {
    /// Tensor of the given shape with every element equal to `fill`.
    pub fn new(shape: &[usize], fill: T) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![fill; len],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(shape, T::zero())
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(shape_err(format!(
                "shape {shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// A zero tensor with the same shape as `self`.
    pub fn zeros_like(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: vec![T::zero(); self.data.len()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
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

    /// Row-major offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(shape_err(format!(
                "index rank {} does not match tensor rank {}",
                index.len(),
                self.shape.len()
            )));
        }
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            if i >= d {
                return Err(shape_err(format!(
                    "index {index:?} out of bounds for shape {:?}",
                    self.shape
                )));
            }
            off = off * d + i;
        }
        Ok(off)
    }

    pub fn get(&self, index: &[usize]) -> Result<T> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: T) -> Result<()> {
        let off = self.offset(index)?;
        self.data[off] = value;
        Ok(())
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Converts to another precision.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::of(x.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum_sq(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &x| if x.abs() > acc { x.abs() } else { acc })
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape == other.shape
    }

    fn expect_same_shape(&self, other: &Self) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(shape_err(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )))
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.expect_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(T::one(), other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(-T::one(), other)?;
        Ok(out)
    }

    pub fn scale(&mut self, alpha: T) {
        self.data.iter_mut().for_each(|x| *x *= alpha);
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.expect_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs())))
    }
}

/// H×W complex image held as a `[2, H, W]` tensor (real, imaginary).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage<T> {
    channels: Tensor<T>,
}

fn check_image_dims(height: usize, width: usize) -> Result<()> {
    for (name, d) in [("height", height), ("width", width)] {
        if d < 4 || d % 2 != 0 {
            return Err(shape_err(format!(
                "image {name} must be even and at least 4, got {d}"
            )));
        }
    }
    Ok(())
}

impl<T: Scalar> ComplexImage<T> {
    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        check_image_dims(height, width)?;
        Ok(Self {
            channels: Tensor::zeros(&[2, height, width])?,
        })
    }

    pub fn from_tensor(channels: Tensor<T>) -> Result<Self> {
        match *channels.shape() {
            [2, h, w] => {
                check_image_dims(h, w)?;
                Ok(Self { channels })
            }
            _ => Err(shape_err(format!(
                "complex image needs shape [2, H, W], got {:?}",
                channels.shape()
            ))),
        }
    }

    /// Builds an image from separate real and imaginary planes.
    pub fn from_parts(height: usize, width: usize, re: &[T], im: &[T]) -> Result<Self> {
        let n = height * width;
        if re.len() != n || im.len() != n {
            return Err(shape_err(format!(
                "planes of length {}/{} do not match {height}x{width}",
                re.len(),
                im.len()
            )));
        }
        let mut img = Self::zeros(height, width)?;
        img.re_mut().copy_from_slice(re);
        img.im_mut().copy_from_slice(im);
        Ok(img)
    }

    pub fn height(&self) -> usize {
        self.channels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.channels.shape()[2]
    }

    pub fn pixels(&self) -> usize {
        self.height() * self.width()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn as_tensor(&self) -> &Tensor<T> {
        &self.channels
    }

    pub fn as_tensor_mut(&mut self) -> &mut Tensor<T> {
        &mut self.channels
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.channels
    }

    pub fn re(&self) -> &[T] {
        &self.channels.data()[..self.pixels()]
    }

    pub fn im(&self) -> &[T] {
        &self.channels.data()[self.pixels()..]
    }

    pub fn re_mut(&mut self) -> &mut [T] {
        let n = self.pixels();
        &mut self.channels.data_mut()[..n]
    }

    pub fn im_mut(&mut self) -> &mut [T] {
        let n = self.pixels();
        &mut self.channels.data_mut()[n..]
    }

    /// Mutable real and imaginary planes at once.
    pub fn planes_mut(&mut self) -> (&mut [T], &mut [T]) {
        let n = self.pixels();
        self.channels.data_mut().split_at_mut(n)
    }

    pub fn pixel(&self, i: usize, j: usize) -> (T, T) {
        let k = i * self.width() + j;
        (self.re()[k], self.im()[k])
    }

    pub fn set_pixel(&mut self, i: usize, j: usize, value: (T, T)) {
        let k = i * self.width() + j;
        self.re_mut()[k] = value.0;
        self.im_mut()[k] = value.1;
    }

    /// Per-pixel magnitude |z|, row-major.
    pub fn magnitude(&self) -> Vec<T> {
        self.re()
            .iter()
            .zip(self.im())
            .map(|(&a, &b)| a.hypot(b))
            .collect()
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.dims() == other.dims()
    }

    pub fn expect_same_dims(&self, other: &Self) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(shape_err(format!(
                "image dims differ: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )))
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Ok(Self {
            channels: self.channels.add(&other.channels)?,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        Ok(Self {
            channels: self.channels.sub(&other.channels)?,
        })
    }

    pub fn scale(&mut self, alpha: T) {
        self.channels.scale(alpha);
    }

    pub fn cast<U: Scalar>(&self) -> ComplexImage<U> {
        ComplexImage {
            channels: self.channels.cast(),
        }
    }

    pub fn norm_sq(&self) -> T {
        complex_norm_sq(self)
    }
}

/// Σ over pixels of re² + im².
pub fn complex_norm_sq<T: Scalar>(img: &ComplexImage<T>) -> T {
    img.channels.sum_sq()
}

/// Validates a positive standard deviation.
pub(crate) fn check_std(std: f64) -> Result<()> {
    if std > 0.0 && std.is_finite() {
        Ok(())
    } else {
        Err(param_err(format!("standard deviation must be > 0, got {std}")))
    }
}
