//! Convolution, ReLU and residual layers with explicit backward passes.
//!
//! Convolutions are cross-correlations (no kernel flip) with stride 1 and
//! zero "same" padding of (k − 1) / 2, so spatial dims are preserved.

use crate::error::{param_err, shape_err, Result};
use crate::rng::{normal_draw, Rng};
use crate::tensor::{ComplexImage, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    /// `[n_out, n_in, k, k]`
    pub weight: Tensor<T>,
    /// `[n_out]`
    pub bias: Tensor<T>,
}

/// Activations saved by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    input: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct ReluCache<T> {
    input: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    /// `None` when the input gradient was not requested.
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

fn spatial(t: &Tensor<impl Scalar>) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(shape_err(format!(
            "expected a [C, H, W] tensor, got {:?}",
            t.shape()
        ))),
    }
}

/// For a kernel tap displaced by `d`, the output range `lo..hi` whose
/// source index `x + d` stays inside `0..n`.
#[inline]
fn valid_range(d: isize, n: usize) -> (usize, usize) {
    let lo = ((-d).max(0) as usize).min(n);
    let hi = (n as isize - d).min(n as isize).max(0) as usize;
    (lo, hi.max(lo))
}

impl<T: Scalar> ConvLayer<T> {
    pub fn zeros(n_out: usize, n_in: usize, k: usize) -> Result<Self> {
        check_kernel(k)?;
        Ok(Self {
            weight: Tensor::zeros(&[n_out, n_in, k, k])?,
            bias: Tensor::zeros(&[n_out])?,
        })
    }

    /// He initialisation: weights ~ N(0, 2 / (n_in·k²)), zero biases.
    pub fn he_init(rng: &mut Rng, n_out: usize, n_in: usize, k: usize) -> Result<Self> {
        check_kernel(k)?;
        let std = (2.0 / (n_in * k * k) as f64).sqrt();
        Ok(Self {
            weight: normal_draw(rng, &[n_out, n_in, k, k], std)?,
            bias: Tensor::zeros(&[n_out])?,
        })
    }

    pub fn n_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn n_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<(usize, usize)> {
        let (c, h, w) = spatial(input)?;
        if c != self.n_in() {
            return Err(shape_err(format!(
                "layer expects {} input channels, got {c}",
                self.n_in()
            )));
        }
        Ok((h, w))
    }

    /// Output only, without keeping a cache.
    pub fn apply(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (h, w) = self.check_input(input)?;
        let (n_out, n_in, k) = (self.n_out(), self.n_in(), self.kernel());
        let pad = (k / 2) as isize;
        let plane = h * w;
        let mut out = Tensor::zeros(&[n_out, h, w])?;
        let weights = self.weight.data();
        let src = input.data();

        for (o, dst) in out.data_mut().chunks_exact_mut(plane).enumerate() {
            dst.fill(self.bias.data()[o]);
            for i in 0..n_in {
                let src_plane = &src[i * plane..(i + 1) * plane];
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    let (y0, y1) = valid_range(dy, h);
                    for kx in 0..k {
                        let wv = weights[((o * n_in + i) * k + ky) * k + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let dx = kx as isize - pad;
                        let (x0, x1) = valid_range(dx, w);
                        if x0 == x1 {
                            continue;
                        }
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let s0 = (sy * w) as isize + x0 as isize + dx;
                            let s = &src_plane[s0 as usize..s0 as usize + (x1 - x0)];
                            let d = &mut dst[y * w + x0..y * w + x1];
                            for (a, &b) in d.iter_mut().zip(s) {
                                *a += wv * b;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<(Tensor<T>, ConvCache<T>)> {
        let out = self.apply(input)?;
        Ok((
            out,
            ConvCache {
                input: input.clone(),
            },
        ))
    }

    pub fn backward(&self, cache: &ConvCache<T>, grad_out: &Tensor<T>) -> Result<ConvGrads<T>> {
        self.backward_with(cache, grad_out, true)
    }

    /// Backward pass; skips the input gradient when `need_input` is false.
    pub fn backward_with(
        &self,
        cache: &ConvCache<T>,
        grad_out: &Tensor<T>,
        need_input: bool,
    ) -> Result<ConvGrads<T>> {
        let input = &cache.input;
        let (h, w) = self.check_input(input)?;
        let (n_out, n_in, k) = (self.n_out(), self.n_in(), self.kernel());
        if grad_out.shape() != [n_out, h, w] {
            return Err(shape_err(format!(
                "grad_out shape {:?} does not match forward output [{n_out}, {h}, {w}]",
                grad_out.shape()
            )));
        }
        let pad = (k / 2) as isize;
        let plane = h * w;
        let weights = self.weight.data();
        let src = input.data();
        let gout = grad_out.data();

        let mut grad_w = self.weight.zeros_like();
        let mut grad_in = if need_input {
            Some(input.zeros_like())
        } else {
            None
        };
        let bias: Vec<T> = gout
            .chunks_exact(plane)
            .map(|p| p.iter().copied().sum())
            .collect();

        for o in 0..n_out {
            let g_plane = &gout[o * plane..(o + 1) * plane];
            for i in 0..n_in {
                let src_plane = &src[i * plane..(i + 1) * plane];
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    let (y0, y1) = valid_range(dy, h);
                    for kx in 0..k {
                        let dx = kx as isize - pad;
                        let (x0, x1) = valid_range(dx, w);
                        if x0 == x1 {
                            continue;
                        }
                        let widx = ((o * n_in + i) * k + ky) * k + kx;
                        let wv = weights[widx];
                        let mut acc = T::zero();
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let s0 = ((sy * w) as isize + x0 as isize + dx) as usize;
                            let s = &src_plane[s0..s0 + (x1 - x0)];
                            let g = &g_plane[y * w + x0..y * w + x1];
                            acc += g.iter().zip(s).map(|(&a, &b)| a * b).sum::<T>();
                            if let Some(gi) = grad_in.as_mut() {
                                let gi = &mut gi.data_mut()[i * plane + s0..i * plane + s0 + (x1 - x0)];
                                for (a, &b) in gi.iter_mut().zip(g) {
                                    *a += wv * b;
                                }
                            }
                        }
                        grad_w.data_mut()[widx] = acc;
                    }
                }
            }
        }

        Ok(ConvGrads {
            input: grad_in,
            weight: grad_w,
            bias: Tensor::from_vec(&[n_out], bias)?,
        })
    }
}

fn check_kernel(k: usize) -> Result<()> {
    if k % 2 == 1 {
        Ok(())
    } else {
        Err(param_err(format!("kernel size must be odd, got {k}")))
    }
}

/// Elementwise max(0, x).
pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, ReluCache<T>) {
    let out = x.map(|v| if v > T::zero() { v } else { T::zero() });
    (out, ReluCache { input: x.clone() })
}

/// Multiplies `grad_out` by the indicator x > 0 (zero subgradient at 0).
pub fn relu_backward<T: Scalar>(cache: &ReluCache<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if !cache.input.same_shape(grad_out) {
        return Err(shape_err(format!(
            "grad_out shape {:?} does not match relu input {:?}",
            grad_out.shape(),
            cache.input.shape()
        )));
    }
    let data = cache
        .input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(grad_out.shape(), data)
}

/// Module output plus module input. The backward pass hands the upstream
/// gradient to both branches unchanged.
pub fn residual_add<T: Scalar>(
    module_out: &ComplexImage<T>,
    module_in: &ComplexImage<T>,
) -> Result<ComplexImage<T>> {
    module_out.add(module_in)
}
