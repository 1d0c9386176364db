//! Data-consistency layer.
//!
//! Forward: `F⁻¹ Λ F x + λ/(1+λ) F⁻¹ x̂_u`, where Λ is diagonal with 1 off the
//! sampled set and 1/(1+λ) on it. With λ infinite the sampled coefficients
//! are replaced outright by the measurements. The Jacobian with respect to
//! `x` is `F⁻¹ Λ F`, which is self-adjoint under the orthonormal DFT, so the
//! backward pass applies the same operator to the upstream gradient.

use crate::error::{param_err, Result};
use crate::fourier::{fft2, ifft2, KSpace};
use crate::sampling::Measurements;
use crate::tensor::{ComplexImage, Scalar};

/// Weight on the measurements relative to the network prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda {
    /// Noiseless mode: sampled coefficients are overwritten.
    Infinite,
    Finite(f64),
}

impl Default for Lambda {
    fn default() -> Self {
        Lambda::Infinite
    }
}

impl Lambda {
    pub fn validate(self) -> Result<Self> {
        match self {
            Lambda::Finite(l) if !(l > 0.0 && l.is_finite()) => {
                Err(param_err(format!("lambda must be positive and finite, got {l}")))
            }
            _ => Ok(self),
        }
    }

    /// Diagonal entry of Λ on a sampled coefficient.
    pub fn sampled_weight(self) -> f64 {
        match self {
            Lambda::Infinite => 0.0,
            Lambda::Finite(l) => 1.0 / (1.0 + l),
        }
    }

    /// Weight λ/(1+λ) on the measured coefficient.
    pub fn measurement_weight(self) -> f64 {
        match self {
            Lambda::Infinite => 1.0,
            Lambda::Finite(l) => l / (1.0 + l),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DcConfig<'a, T> {
    pub lambda: Lambda,
    pub measured: &'a Measurements<T>,
}

impl<'a, T: Scalar> DcConfig<'a, T> {
    pub fn new(lambda: Lambda, measured: &'a Measurements<T>) -> Result<Self> {
        Ok(Self {
            lambda: lambda.validate()?,
            measured,
        })
    }

    fn check(&self, x: &ComplexImage<T>) -> Result<()> {
        x.expect_same_dims(self.measured.kspace.raw())
    }
}

/// Applies `k ← Λ k + c · x̂_u` row by row on the sampled lines.
fn blend_sampled<T: Scalar>(k: &mut KSpace<T>, cfg: &DcConfig<'_, T>, with_measurements: bool) {
    let mask = &cfg.measured.mask;
    let w = mask.width();
    let keep = T::of(cfg.lambda.sampled_weight());
    let take = T::of(cfg.lambda.measurement_weight());
    let (mre, mim) = (cfg.measured.kspace.re(), cfg.measured.kspace.im());
    let (re, im) = k.planes_mut();
    let blend = |current: T, measured: T| match cfg.lambda {
        Lambda::Infinite if with_measurements => measured,
        Lambda::Infinite => T::zero(),
        Lambda::Finite(_) if with_measurements => keep * current + take * measured,
        Lambda::Finite(_) => keep * current,
    };
    for row in (0..mask.height()).filter(|&r| mask.is_sampled(r)) {
        for idx in row * w..(row + 1) * w {
            re[idx] = blend(re[idx], mre[idx]);
            im[idx] = blend(im[idx], mim[idx]);
        }
    }
}

pub fn dc_forward<T: Scalar>(x: &ComplexImage<T>, cfg: &DcConfig<'_, T>) -> Result<ComplexImage<T>> {
    cfg.check(x)?;
    let mut k = fft2(x);
    blend_sampled(&mut k, cfg, true);
    Ok(ifft2(&k))
}

/// `F⁻¹ Λ F` applied to the upstream gradient. No gradient flows to the
/// measurements, which are constant per sample.
pub fn dc_backward<T: Scalar>(
    grad_out: &ComplexImage<T>,
    cfg: &DcConfig<'_, T>,
) -> Result<ComplexImage<T>> {
    cfg.check(grad_out)?;
    let mut k = fft2(grad_out);
    blend_sampled(&mut k, cfg, false);
    Ok(ifft2(&k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_draw, Rng};
    use crate::sampling::{apply_encoding, generate_mask, zero_filled, MaskParams, SamplingMask};

    fn random_image(rng: &mut Rng, h: usize, w: usize) -> ComplexImage<f64> {
        ComplexImage::from_tensor(normal_draw(rng, &[2, h, w], 1.0).unwrap()).unwrap()
    }

    #[test]
    fn lambda_one_takes_midpoint_on_sampled_lines() {
        let mut rng = Rng::new(10);
        let truth = random_image(&mut rng, 8, 8);
        let x = random_image(&mut rng, 8, 8);
        let mask = generate_mask(&mut rng, 8, 8, &MaskParams::new(2.0, 2)).unwrap();
        let meas = apply_encoding(&truth, &mask).unwrap();
        let cfg = DcConfig::new(Lambda::Finite(1.0), &meas).unwrap();
        let out = fft2(&dc_forward(&x, &cfg).unwrap());
        let kx = fft2(&x);
        for u in 0..8 {
            for v in 0..8 {
                let (a, b) = (out.coeff(u, v), kx.coeff(u, v));
                let expected = if mask.is_sampled(u) {
                    let m = meas.kspace.coeff(u, v);
                    ((b.0 + m.0) / 2.0, (b.1 + m.1) / 2.0)
                } else {
                    b
                };
                assert!((a.0 - expected.0).abs() < 1e-12 && (a.1 - expected.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn consistent_input_is_a_fixed_point() {
        let mut rng = Rng::new(11);
        let truth = random_image(&mut rng, 8, 8);
        let mask = generate_mask(&mut rng, 8, 8, &MaskParams::new(2.0, 2)).unwrap();
        let meas = apply_encoding(&truth, &mask).unwrap();
        let xu = zero_filled(&meas);
        let cfg = DcConfig::new(Lambda::Infinite, &meas).unwrap();
        let out = dc_forward(&xu, &cfg).unwrap();
        assert!(out.as_tensor().max_abs_diff(xu.as_tensor()).unwrap() < 1e-13);
    }

    #[test]
    fn empty_mask_is_identity() {
        let mut rng = Rng::new(12);
        let x = random_image(&mut rng, 8, 8);
        let meas = apply_encoding(&x, &SamplingMask::empty(8, 8).unwrap()).unwrap();
        for lambda in [Lambda::Infinite, Lambda::Finite(0.3)] {
            let cfg = DcConfig::new(lambda, &meas).unwrap();
            let y = dc_forward(&x, &cfg).unwrap();
            assert!(y.as_tensor().max_abs_diff(x.as_tensor()).unwrap() < 1e-13);
            let g = dc_backward(&x, &cfg).unwrap();
            assert!(g.as_tensor().max_abs_diff(x.as_tensor()).unwrap() < 1e-13);
        }
    }

    #[test]
    fn full_mask_infinite_lambda_kills_gradient() {
        let mut rng = Rng::new(13);
        let x = random_image(&mut rng, 8, 8);
        let meas = apply_encoding(&x, &SamplingMask::full(8, 8).unwrap()).unwrap();
        let cfg = DcConfig::new(Lambda::Infinite, &meas).unwrap();
        assert!(dc_backward(&x, &cfg).unwrap().as_tensor().max_abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_lambda_and_shapes() {
        let x = ComplexImage::<f64>::zeros(8, 8).unwrap();
        let meas = apply_encoding(&x, &SamplingMask::full(8, 8).unwrap()).unwrap();
        assert!(DcConfig::new(Lambda::Finite(0.0), &meas).is_err());
        assert!(DcConfig::new(Lambda::Finite(f64::NAN), &meas).is_err());
        let cfg = DcConfig::new(Lambda::Infinite, &meas).unwrap();
        assert!(dc_forward(&ComplexImage::zeros(8, 4).unwrap(), &cfg).is_err());
        assert!(dc_backward(&ComplexImage::zeros(4, 8).unwrap(), &cfg).is_err());
    }
}
