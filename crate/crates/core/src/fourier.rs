//! Orthonormal 2D DFT on complex images.
//!
//! Coefficient (u, v) = (1/√(HW)) Σ x(i, j) exp(−2πi(ui/H + vj/W)), with the
//! DC term at index (0, 0). Power-of-two lengths use an iterative radix-2
//! transform; other lengths fall back to a direct O(n²) DFT.

use crate::error::Result;
use crate::tensor::{ComplexImage, Scalar, Tensor};

/// Fourier coefficients of a complex image, `[2, H, W]` like the image
/// itself but indexed by spatial frequency. No implicit shift.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpace<T> {
    coeffs: ComplexImage<T>,
}

impl<T: Scalar> KSpace<T> {
    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Ok(Self {
            coeffs: ComplexImage::zeros(height, width)?,
        })
    }

    /// Reinterprets a `[2, H, W]` array as k-space coefficients.
    pub fn from_raw(coeffs: ComplexImage<T>) -> Self {
        Self { coeffs }
    }

    pub fn into_raw(self) -> ComplexImage<T> {
        self.coeffs
    }

    pub fn raw(&self) -> &ComplexImage<T> {
        &self.coeffs
    }

    pub fn raw_mut(&mut self) -> &mut ComplexImage<T> {
        &mut self.coeffs
    }

    pub fn height(&self) -> usize {
        self.coeffs.height()
    }

    pub fn width(&self) -> usize {
        self.coeffs.width()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.coeffs.dims()
    }

    pub fn re(&self) -> &[T] {
        self.coeffs.re()
    }

    pub fn im(&self) -> &[T] {
        self.coeffs.im()
    }

    pub fn planes_mut(&mut self) -> (&mut [T], &mut [T]) {
        self.coeffs.planes_mut()
    }

    pub fn coeff(&self, u: usize, v: usize) -> (T, T) {
        self.coeffs.pixel(u, v)
    }

    pub fn as_tensor(&self) -> &Tensor<T> {
        self.coeffs.as_tensor()
    }

    pub fn norm_sq(&self) -> T {
        self.coeffs.norm_sq()
    }
}

enum Kernel {
    Radix2 { bitrev: Vec<usize> },
    Direct,
}

/// Precomputed 1D transform of a fixed length.
struct Plan<T> {
    n: usize,
    // exp(−2πik/n) for k in 0..n
    cos: Vec<T>,
    sin: Vec<T>,
    kernel: Kernel,
}

impl<T: Scalar> Plan<T> {
    fn new(n: usize) -> Self {
        let (cos, sin) = (0..n)
            .map(|k| {
                let theta = -2.0 * std::f64::consts::PI * k as f64 / n as f64;
                (T::of(theta.cos()), T::of(theta.sin()))
            })
            .unzip();
        let kernel = if n.is_power_of_two() {
            let bits = n.trailing_zeros();
            let bitrev = (0..n)
                .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
                .collect();
            Kernel::Radix2 { bitrev }
        } else {
            Kernel::Direct
        };
        Self { n, cos, sin, kernel }
    }

    /// Unnormalized in-place transform. `inverse` flips the exponent sign.
    fn run(&self, re: &mut [T], im: &mut [T], scratch: &mut Vec<T>, inverse: bool) {
        debug_assert_eq!(re.len(), self.n);
        let sign = if inverse { -T::one() } else { T::one() };
        match &self.kernel {
            Kernel::Radix2 { bitrev } => {
                for (i, &j) in bitrev.iter().enumerate() {
                    if i < j {
                        re.swap(i, j);
                        im.swap(i, j);
                    }
                }
                let mut size = 2;
                while size <= self.n {
                    let half = size / 2;
                    let stride = self.n / size;
                    for start in (0..self.n).step_by(size) {
                        for k in 0..half {
                            let wr = self.cos[k * stride];
                            let wi = sign * self.sin[k * stride];
                            let a = start + k;
                            let b = a + half;
                            let br = re[b] * wr - im[b] * wi;
                            let bi = re[b] * wi + im[b] * wr;
                            re[b] = re[a] - br;
                            im[b] = im[a] - bi;
                            re[a] += br;
                            im[a] += bi;
                        }
                    }
                    size *= 2;
                }
            }
            Kernel::Direct => {
                let n = self.n;
                scratch.clear();
                scratch.resize(2 * n, T::zero());
                for u in 0..n {
                    let (mut sr, mut si) = (T::zero(), T::zero());
                    for j in 0..n {
                        let idx = (u * j) % n;
                        let wr = self.cos[idx];
                        let wi = sign * self.sin[idx];
                        sr += re[j] * wr - im[j] * wi;
                        si += re[j] * wi + im[j] * wr;
                    }
                    scratch[u] = sr;
                    scratch[n + u] = si;
                }
                re.copy_from_slice(&scratch[..n]);
                im.copy_from_slice(&scratch[n..]);
            }
        }
    }
}

fn transform2d<T: Scalar>(re: &mut [T], im: &mut [T], height: usize, width: usize, inverse: bool) {
    let rows = Plan::new(width);
    let cols = if height == width { None } else { Some(Plan::new(height)) };
    let cols = cols.as_ref().unwrap_or(&rows);
    let mut scratch = Vec::new();

    for (r, i) in re.chunks_exact_mut(width).zip(im.chunks_exact_mut(width)) {
        rows.run(r, i, &mut scratch, inverse);
    }

    let mut col_re = vec![T::zero(); height];
    let mut col_im = vec![T::zero(); height];
    for j in 0..width {
        for i in 0..height {
            col_re[i] = re[i * width + j];
            col_im[i] = im[i * width + j];
        }
        cols.run(&mut col_re, &mut col_im, &mut scratch, inverse);
        for i in 0..height {
            re[i * width + j] = col_re[i];
            im[i * width + j] = col_im[i];
        }
    }

    let scale = T::of(1.0 / ((height * width) as f64).sqrt());
    re.iter_mut().chain(im.iter_mut()).for_each(|x| *x *= scale);
}

/// Orthonormal forward 2D DFT.
pub fn fft2<T: Scalar>(img: &ComplexImage<T>) -> KSpace<T> {
    let (h, w) = img.dims();
    let mut out = img.clone();
    let (re, im) = out.planes_mut();
    transform2d(re, im, h, w, false);
    KSpace { coeffs: out }
}

/// Orthonormal inverse 2D DFT; exact inverse of [`fft2`] up to roundoff.
pub fn ifft2<T: Scalar>(k: &KSpace<T>) -> ComplexImage<T> {
    let (h, w) = k.dims();
    let mut out = k.coeffs.clone();
    let (re, im) = out.planes_mut();
    transform2d(re, im, h, w, true);
    out
}
