//! The cascade: `n_c` stages of [CNN module + residual → data consistency].
//!
//! Each CNN module has `n_d − 1` conv+ReLU layers (2 → n_f → … → n_f) and a
//! final conv back to two channels with no activation. The module output is
//! added to its input before the DC layer. Stages have independent weights.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::dclayer::{dc_backward, dc_forward, DcConfig, Lambda};
use crate::error::{param_err, shape_err, Error, Result};
use crate::layers::{relu_backward, relu_forward, residual_add, ConvCache, ConvLayer, ReluCache};
use crate::rng::Rng;
use crate::sampling::Measurements;
use crate::tensor::{ComplexImage, Scalar, Tensor};

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Hyper {
    /// Number of cascade stages.
    pub n_c: usize,
    /// Conv layers per stage, including the final projection.
    pub n_d: usize,
    /// Feature channels in the hidden layers.
    pub n_f: usize,
    pub kernel: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            n_c: 5,
            n_d: 5,
            n_f: 64,
            kernel: 3,
        }
    }
}

impl Hyper {
    /// Small profile for CPU experiments.
    pub fn desk() -> Self {
        Self {
            n_c: 3,
            n_d: 3,
            n_f: 16,
            kernel: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_c < 1 {
            return Err(param_err("n_c must be at least 1"));
        }
        if self.n_d < 2 {
            return Err(param_err("n_d must be at least 2"));
        }
        if self.n_f < 1 {
            return Err(param_err("n_f must be at least 1"));
        }
        if self.kernel % 2 == 0 {
            return Err(param_err(format!("kernel size must be odd, got {}", self.kernel)));
        }
        Ok(())
    }

    /// (n_out, n_in) of conv layer `i` within a stage.
    pub fn layer_channels(&self, i: usize) -> (usize, usize) {
        let n_in = if i == 0 { 2 } else { self.n_f };
        let n_out = if i + 1 == self.n_d { 2 } else { self.n_f };
        (n_out, n_in)
    }

    pub fn param_count(&self) -> usize {
        let per_stage: usize = (0..self.n_d)
            .map(|i| {
                let (o, n) = self.layer_channels(i);
                o * n * self.kernel * self.kernel + o
            })
            .sum();
        per_stage * self.n_c
    }
}

impl std::fmt::Display for Hyper {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "nc{}-nd{}-nf{}-k{}",
            self.n_c, self.n_d, self.n_f, self.kernel
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModule<T> {
    pub convs: Vec<ConvLayer<T>>,
}

#[derive(Debug)]
struct StageCache<T> {
    convs: Vec<ConvCache<T>>,
    relus: Vec<ReluCache<T>>,
}

/// Everything [`CascadeModel::backward`] needs from a forward call.
#[derive(Debug)]
pub struct CascadeCache<'a, T> {
    measured: &'a Measurements<T>,
    stages: Vec<StageCache<T>>,
    revision: u64,
}

/// Gradients for every parameter, in [`CascadeModel::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(shape_err("gradient sets have different lengths"));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.axpy(T::one(), b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: T) {
        self.tensors.iter_mut().for_each(|t| t.scale(alpha));
    }

    pub fn max_abs(&self) -> T {
        self.tensors
            .iter()
            .map(|t| t.max_abs())
            .fold(T::zero(), |a, b| a.max(b))
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.is_finite())
    }
}

static NEXT_REVISION: AtomicU64 = AtomicU64::new(1);

fn fresh_revision() -> u64 {
    NEXT_REVISION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug)]
pub struct CascadeModel<T> {
    stages: Vec<CnnModule<T>>,
    hyper: Hyper,
    lambda: Lambda,
    // Changes whenever parameters may have been mutated; caches from an
    // older revision are rejected by `backward`.
    revision: u64,
}

impl<T: Scalar> Clone for CascadeModel<T> {
    fn clone(&self) -> Self {
        Self {
            stages: self.stages.clone(),
            hyper: self.hyper,
            lambda: self.lambda,
            revision: fresh_revision(),
        }
    }
}

impl<T: Scalar> PartialEq for CascadeModel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.hyper == other.hyper && self.lambda == other.lambda && self.stages == other.stages
    }
}

impl<T: Scalar> CascadeModel<T> {
    /// Builds a model, calling `make(n_out, n_in, k)` for each layer in
    /// parameter order.
    fn build(
        hyper: Hyper,
        lambda: Lambda,
        mut make: impl FnMut(usize, usize, usize) -> Result<ConvLayer<T>>,
    ) -> Result<Self> {
        hyper.validate()?;
        let lambda = lambda.validate()?;
        let mut stages = Vec::with_capacity(hyper.n_c);
        for _ in 0..hyper.n_c {
            let convs = (0..hyper.n_d)
                .map(|i| {
                    let (o, n) = hyper.layer_channels(i);
                    make(o, n, hyper.kernel)
                })
                .collect::<Result<_>>()?;
            stages.push(CnnModule { convs });
        }
        Ok(Self {
            stages,
            hyper,
            lambda,
            revision: fresh_revision(),
        })
    }

    pub fn he_init(rng: &mut Rng, hyper: Hyper, lambda: Lambda) -> Result<Self> {
        Self::build(hyper, lambda, |o, n, k| ConvLayer::he_init(rng, o, n, k))
    }

    pub fn zeros(hyper: Hyper, lambda: Lambda) -> Result<Self> {
        Self::build(hyper, lambda, ConvLayer::zeros)
    }

    /// Assembles a model from parameter tensors in [`Self::params`] order.
    pub fn from_params(hyper: Hyper, lambda: Lambda, params: Vec<Tensor<T>>) -> Result<Self> {
        let mut model = Self::zeros(hyper, lambda)?;
        let expected: Vec<Vec<usize>> = model.params().iter().map(|t| t.shape().to_vec()).collect();
        if params.len() != expected.len() {
            return Err(shape_err(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for ((slot, value), shape) in model.params_mut().into_iter().zip(params).zip(&expected) {
            if value.shape() != shape.as_slice() {
                return Err(shape_err(format!(
                    "parameter shape {:?} does not match {shape:?}",
                    value.shape()
                )));
            }
            *slot = value;
        }
        Ok(model)
    }

    pub fn hyper(&self) -> Hyper {
        self.hyper
    }

    pub fn lambda(&self) -> Lambda {
        self.lambda
    }

    pub fn set_lambda(&mut self, lambda: Lambda) -> Result<()> {
        self.lambda = lambda.validate()?;
        Ok(())
    }

    pub fn stages(&self) -> &[CnnModule<T>] {
        &self.stages
    }

    pub fn cast<U: Scalar>(&self) -> CascadeModel<U> {
        CascadeModel {
            stages: self
                .stages
                .iter()
                .map(|s| CnnModule {
                    convs: s
                        .convs
                        .iter()
                        .map(|c| ConvLayer {
                            weight: c.weight.cast(),
                            bias: c.bias.cast(),
                        })
                        .collect(),
                })
                .collect(),
            hyper: self.hyper,
            lambda: self.lambda,
            revision: fresh_revision(),
        }
    }

    /// All parameters: for each stage, for each conv, weight then bias.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.stages
            .iter()
            .flat_map(|s| s.convs.iter().flat_map(|c| [&c.weight, &c.bias]))
            .collect()
    }

    /// Mutable parameters. Invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.revision = fresh_revision();
        self.stages
            .iter_mut()
            .flat_map(|s| s.convs.iter_mut().flat_map(|c| [&mut c.weight, &mut c.bias]))
            .collect()
    }

    /// Names matching [`Self::params`]: `stage{s}.conv{i}.weight|bias`.
    pub fn param_names(&self) -> Vec<String> {
        (0..self.hyper.n_c)
            .flat_map(|s| {
                (0..self.hyper.n_d).flat_map(move |i| {
                    ["weight", "bias"].map(|kind| format!("stage{s}.conv{i}.{kind}"))
                })
            })
            .collect()
    }

    pub fn zero_grads(&self) -> ParamGrads<T> {
        ParamGrads {
            tensors: self.params().into_iter().map(Tensor::zeros_like).collect(),
        }
    }

    fn check_input(&self, x_u: &ComplexImage<T>, meas: &Measurements<T>) -> Result<()> {
        x_u.expect_same_dims(meas.kspace.raw())
    }

    /// Inference without caches.
    pub fn reconstruct(&self, x_u: &ComplexImage<T>, meas: &Measurements<T>) -> Result<ComplexImage<T>> {
        self.check_input(x_u, meas)?;
        let dc = DcConfig::new(self.lambda, meas)?;
        let mut x = x_u.clone();
        for stage in &self.stages {
            let last = stage.convs.len() - 1;
            let mut h = x.as_tensor().clone();
            for (i, conv) in stage.convs.iter().enumerate() {
                h = conv.apply(&h)?;
                if i < last {
                    h = relu_forward(&h).0;
                }
            }
            let r = residual_add(&ComplexImage::from_tensor(h)?, &x)?;
            x = dc_forward(&r, &dc)?;
        }
        Ok(x)
    }

    /// Forward pass keeping what the backward pass needs.
    pub fn forward<'a>(
        &self,
        x_u: &ComplexImage<T>,
        meas: &'a Measurements<T>,
    ) -> Result<(ComplexImage<T>, CascadeCache<'a, T>)> {
        self.check_input(x_u, meas)?;
        let dc = DcConfig::new(self.lambda, meas)?;
        let mut x = x_u.clone();
        let mut caches = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let last = stage.convs.len() - 1;
            let mut convs = Vec::with_capacity(stage.convs.len());
            let mut relus = Vec::with_capacity(last);
            let mut h = x.as_tensor().clone();
            for (i, conv) in stage.convs.iter().enumerate() {
                let (out, cc) = conv.forward(&h)?;
                convs.push(cc);
                h = if i < last {
                    let (act, rc) = relu_forward(&out);
                    relus.push(rc);
                    act
                } else {
                    out
                };
            }
            let r = residual_add(&ComplexImage::from_tensor(h)?, &x)?;
            x = dc_forward(&r, &dc)?;
            caches.push(StageCache { convs, relus });
        }
        Ok((
            x,
            CascadeCache {
                measured: meas,
                stages: caches,
                revision: self.revision,
            },
        ))
    }

    /// Gradient of a scalar loss with respect to every parameter, given the
    /// loss gradient at the cascade output.
    pub fn backward(&self, cache: &CascadeCache<'_, T>, grad_out: &ComplexImage<T>) -> Result<ParamGrads<T>> {
        if cache.revision != self.revision || cache.stages.len() != self.stages.len() {
            return Err(Error::InvalidState(
                "forward cache does not belong to the current model parameters".into(),
            ));
        }
        grad_out.expect_same_dims(cache.measured.kspace.raw())?;
        let dc = DcConfig::new(self.lambda, cache.measured)?;

        let per_stage = 2 * self.hyper.n_d;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; per_stage * self.stages.len()];
        let mut g = grad_out.clone();

        for (s, (stage, sc)) in self.stages.iter().zip(&cache.stages).enumerate().rev() {
            let g_res = dc_backward(&g, &dc)?;
            let last = stage.convs.len() - 1;
            let mut gh = g_res.as_tensor().clone();
            for i in (0..stage.convs.len()).rev() {
                if i < last {
                    gh = relu_backward(&sc.relus[i], &gh)?;
                }
                let need_input = !(s == 0 && i == 0);
                let cg = stage.convs[i].backward_with(&sc.convs[i], &gh, need_input)?;
                grads[s * per_stage + 2 * i] = Some(cg.weight);
                grads[s * per_stage + 2 * i + 1] = Some(cg.bias);
                if let Some(gi) = cg.input {
                    gh = gi;
                }
            }
            if s > 0 {
                // Residual branch plus the path through the module.
                let mut gx = g_res.into_tensor();
                gx.axpy(T::one(), &gh)?;
                g = ComplexImage::from_tensor(gx)?;
            }
        }

        Ok(ParamGrads {
            tensors: grads.into_iter().map(|t| t.expect("every layer visited")).collect(),
        })
    }
}

/// Free-function form of [`CascadeModel::forward`].
pub fn cascade_forward<'a, T: Scalar>(
    model: &CascadeModel<T>,
    x_u: &ComplexImage<T>,
    meas: &'a Measurements<T>,
) -> Result<(ComplexImage<T>, CascadeCache<'a, T>)> {
    model.forward(x_u, meas)
}

/// Free-function form of [`CascadeModel::backward`].
pub fn cascade_backward<T: Scalar>(
    model: &CascadeModel<T>,
    cache: &CascadeCache<'_, T>,
    grad_out: &ComplexImage<T>,
) -> Result<ParamGrads<T>> {
    model.backward(cache, grad_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::normal_draw;
    use crate::sampling::{apply_encoding, generate_mask, zero_filled, MaskParams, SamplingMask};

    fn setup(seed: u64, n: usize) -> (ComplexImage<f64>, Measurements<f64>) {
        let mut rng = Rng::new(seed);
        let x = ComplexImage::from_tensor(normal_draw(&mut rng, &[2, n, n], 1.0).unwrap()).unwrap();
        let mask = generate_mask(&mut rng, n, n, &MaskParams::new(3.0, 2)).unwrap();
        let meas = apply_encoding(&x, &mask).unwrap();
        (x, meas)
    }

    #[test]
    fn param_layout() {
        let h = Hyper { n_c: 2, n_d: 3, n_f: 4, kernel: 3 };
        let m = CascadeModel::<f64>::zeros(h, Lambda::Infinite).unwrap();
        let names = m.param_names();
        assert_eq!(names.len(), m.params().len());
        assert_eq!(names[0], "stage0.conv0.weight");
        assert_eq!(names[11], "stage1.conv2.bias");
        assert_eq!(m.params()[0].shape(), &[4, 2, 3, 3]);
        assert_eq!(m.params()[4].shape(), &[2, 4, 3, 3]);
        let total: usize = m.params().iter().map(|t| t.len()).sum();
        assert_eq!(total, h.param_count());
    }

    #[test]
    fn hyper_guards() {
        assert!(Hyper { n_c: 0, ..Hyper::desk() }.validate().is_err());
        assert!(Hyper { n_d: 1, ..Hyper::desk() }.validate().is_err());
        assert!(Hyper { kernel: 2, ..Hyper::desk() }.validate().is_err());
    }

    #[test]
    fn zero_network_is_identity_on_consistent_input() {
        let (_, meas) = setup(1, 16);
        let xu = zero_filled(&meas);
        let m = CascadeModel::zeros(Hyper { n_c: 3, n_d: 3, n_f: 4, kernel: 3 }, Lambda::Infinite).unwrap();
        let (out, _) = m.forward(&xu, &meas).unwrap();
        assert!(out.as_tensor().max_abs_diff(xu.as_tensor()).unwrap() < 1e-14);
    }

    #[test]
    fn single_stage_matches_manual_composition() {
        let (_, meas) = setup(2, 8);
        let xu = zero_filled(&meas);
        let h = Hyper { n_c: 1, n_d: 3, n_f: 3, kernel: 3 };
        let m = CascadeModel::<f64>::he_init(&mut Rng::new(3), h, Lambda::Infinite).unwrap();
        let convs = &m.stages()[0].convs;
        let a = relu_forward(&convs[0].apply(xu.as_tensor()).unwrap()).0;
        let b = relu_forward(&convs[1].apply(&a).unwrap()).0;
        let c = convs[2].apply(&b).unwrap();
        let r = residual_add(&ComplexImage::from_tensor(c).unwrap(), &xu).unwrap();
        let dc = DcConfig::new(Lambda::Infinite, &meas).unwrap();
        let manual = dc_forward(&r, &dc).unwrap();
        let (out, _) = m.forward(&xu, &meas).unwrap();
        assert_eq!(out, manual);
        assert_eq!(m.reconstruct(&xu, &meas).unwrap(), manual);
    }

    #[test]
    fn full_mask_zero_network_returns_original() {
        let (x, _) = setup(4, 8);
        let meas = apply_encoding(&x, &SamplingMask::full(8, 8).unwrap()).unwrap();
        let m = CascadeModel::zeros(Hyper::desk(), Lambda::Infinite).unwrap();
        let out = m.reconstruct(&zero_filled(&meas), &meas).unwrap();
        assert!(out.as_tensor().max_abs_diff(x.as_tensor()).unwrap() < 1e-13);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let (_, meas) = setup(5, 8);
        let xu = zero_filled(&meas);
        let m = CascadeModel::<f64>::he_init(&mut Rng::new(6), Hyper { n_c: 2, n_d: 3, n_f: 4, kernel: 3 }, Lambda::Infinite).unwrap();
        let (out, cache) = m.forward(&xu, &meas).unwrap();
        let g = m.backward(&cache, &ComplexImage::zeros(8, 8).unwrap()).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        drop(out);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let (_, meas) = setup(7, 8);
        let xu = zero_filled(&meas);
        let mut m = CascadeModel::<f64>::he_init(&mut Rng::new(8), Hyper { n_c: 1, n_d: 2, n_f: 2, kernel: 3 }, Lambda::Infinite).unwrap();
        let (out, cache) = m.forward(&xu, &meas).unwrap();
        m.params_mut()[0].scale(0.5);
        assert!(matches!(m.backward(&cache, &out), Err(Error::InvalidState(_))));
        let other = m.clone();
        let (_, cache) = m.forward(&xu, &meas).unwrap();
        assert!(matches!(other.backward(&cache, &out), Err(Error::InvalidState(_))));
    }

    #[test]
    fn from_params_checks_shapes() {
        let h = Hyper { n_c: 1, n_d: 2, n_f: 2, kernel: 3 };
        let m = CascadeModel::<f64>::he_init(&mut Rng::new(9), h, Lambda::Infinite).unwrap();
        let params: Vec<Tensor<f64>> = m.params().into_iter().cloned().collect();
        assert_eq!(CascadeModel::from_params(h, Lambda::Infinite, params.clone()).unwrap(), m);
        let mut bad = params;
        bad.swap(0, 1);
        assert!(CascadeModel::from_params(h, Lambda::Infinite, bad).is_err());
    }
}
