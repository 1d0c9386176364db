//! End-to-end training: per-pixel MSE loss, Adam with coupled L2 weight
//! decay, rigid-transform augmentation and on-the-fly mask generation.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;

use crate::cascade::{CascadeModel, ParamGrads};
use crate::error::{param_err, shape_err, Error, Result};
use crate::rng::Rng;
use crate::sampling::{apply_encoding, generate_mask, zero_filled, MaskParams, Measurements, DEFAULT_STD_FRACTION};
use crate::tensor::{ComplexImage, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub acceleration: f64,
    pub n_low: usize,
    pub mask_std_fraction: f64,
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-7,
            batch_size: 10,
            epochs: 1,
            acceleration: 3.0,
            n_low: 8,
            mask_std_fraction: DEFAULT_STD_FRACTION,
            augment: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(param_err(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(param_err(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(param_err("epsilon must be > 0"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(param_err("weight decay must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(param_err("batch size must be >= 1"));
        }
        Ok(())
    }

    pub fn mask_params(&self) -> MaskParams {
        MaskParams {
            acceleration: self.acceleration,
            n_low: self.n_low,
            std_fraction: self.mask_std_fraction,
        }
    }
}

/// Per-pixel mean squared error and its gradient with respect to `x_cnn`.
pub fn mse_loss<T: Scalar>(x_cnn: &ComplexImage<T>, x_t: &ComplexImage<T>) -> Result<(T, ComplexImage<T>)> {
    x_cnn.expect_same_dims(x_t)?;
    let n = T::of(x_cnn.pixels() as f64);
    let mut diff = x_cnn.sub(x_t)?;
    let loss = diff.norm_sq() / n;
    diff.scale(T::of(2.0) / n);
    Ok((loss, diff))
}

/// Reconstruction MSE without the gradient.
pub fn mse<T: Scalar>(a: &ComplexImage<T>, b: &ComplexImage<T>) -> Result<f64> {
    a.expect_same_dims(b)?;
    let sum: f64 = a
        .as_tensor()
        .data()
        .iter()
        .zip(b.as_tensor().data())
        .map(|(&x, &y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum();
    Ok(sum / a.pixels() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(model: &CascadeModel<T>) -> Self {
        let zeros: Vec<Tensor<T>> = model.params().into_iter().map(Tensor::zeros_like).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update over a list of parameter tensors. The
/// weight decay term `wd·θ` is added to the gradient before the moments.
pub fn adam_update<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(shape_err(format!(
            "{} parameters, {} gradients, {} moment tensors",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if !p.same_shape(g) || !p.same_shape(m) {
            return Err(shape_err(format!(
                "parameter {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    let t = state
        .t
        .checked_add(1)
        .ok_or_else(|| Error::InvalidState("Adam step counter overflow".into()))?;
    state.t = t;

    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let one = T::one();
    let steps = i32::try_from(t).unwrap_or(i32::MAX);
    let c1 = one / (one - T::of(cfg.beta1.powi(steps)));
    let c2 = one / (one - T::of(cfg.beta2.powi(steps)));
    let (alpha, eps, wd) = (T::of(cfg.alpha), T::of(cfg.epsilon), T::of(cfg.weight_decay));

    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        let it = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut()));
        for ((theta, &grad), (mi, vi)) in it {
            let g = grad + wd * *theta;
            *mi = b1 * *mi + (one - b1) * g;
            *vi = b2 * *vi + (one - b2) * g * g;
            let m_hat = *mi * c1;
            let v_hat = *vi * c2;
            *theta -= alpha * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// [`adam_update`] applied to every parameter of a model.
pub fn adam_step<T: Scalar>(
    model: &mut CascadeModel<T>,
    grads: &ParamGrads<T>,
    state: &mut AdamState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    let mut params = model.params_mut();
    adam_update(&mut params, &grads.tensors, state, cfg)
}

/// Element of {0, 90, 180, 270° rotations} × {identity, horizontal flip} ×
/// {circular shifts}. Applied as flip, then rotation, then shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RigidTransform {
    /// Counter-clockwise quarter turns, 0..4.
    pub quarter_turns: u8,
    pub flip: bool,
    /// Circular shift along (rows, columns).
    pub shift: (i32, i32),
}

pub const MAX_SHIFT: i32 = 4;

impl RigidTransform {
    pub fn identity() -> Self {
        Self::default()
    }

    /// Uniform draw. Non-square images only use 0° and 180° rotations.
    pub fn sample(rng: &mut Rng, square: bool) -> Self {
        let quarter_turns = if square {
            rng.below(4) as u8
        } else {
            2 * rng.below(2) as u8
        };
        let flip = rng.below(2) == 1;
        let span = (2 * MAX_SHIFT + 1) as usize;
        let dy = rng.below(span) as i32 - MAX_SHIFT;
        let dx = rng.below(span) as i32 - MAX_SHIFT;
        Self {
            quarter_turns,
            flip,
            shift: (dy, dx),
        }
    }

    pub fn apply<T: Scalar>(&self, img: &ComplexImage<T>) -> Result<ComplexImage<T>> {
        let (h, w) = img.dims();
        let turns = self.quarter_turns % 4;
        if turns % 2 == 1 && h != w {
            return Err(shape_err("quarter-turn rotation needs a square image"));
        }
        let mut out = ComplexImage::zeros(h, w)?;
        let (dy, dx) = self.shift;
        for i in 0..h {
            for j in 0..w {
                // Source pixel of output (i, j): undo the shift, then the
                // rotation, then the flip.
                let si = (i as i64 - dy as i64).rem_euclid(h as i64) as usize;
                let sj = (j as i64 - dx as i64).rem_euclid(w as i64) as usize;
                // A CCW quarter turn reads output (i, j) from (j, n - 1 - i).
                let (ri, mut rj) = match turns {
                    0 => (si, sj),
                    1 => (sj, h - 1 - si),
                    2 => (h - 1 - si, w - 1 - sj),
                    _ => (w - 1 - sj, si),
                };
                if self.flip {
                    rj = w - 1 - rj;
                }
                out.set_pixel(i, j, img.pixel(ri, rj));
            }
        }
        Ok(out)
    }
}

/// Random rigid transform applied identically to both channels.
pub fn augment<T: Scalar>(rng: &mut Rng, img: &ComplexImage<T>) -> Result<ComplexImage<T>> {
    let (h, w) = img.dims();
    RigidTransform::sample(rng, h == w).apply(img)
}

/// A training example: target image, its undersampled measurements and the
/// zero-filled network input.
#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub target: ComplexImage<T>,
    pub meas: Measurements<T>,
    pub x_u: ComplexImage<T>,
}

impl<T: Scalar> Sample<T> {
    pub fn new(target: ComplexImage<T>, meas: Measurements<T>) -> Self {
        let x_u = zero_filled(&meas);
        Self { target, meas, x_u }
    }

    /// Augments `target` (when enabled) and draws a fresh mask, all from `rng`.
    pub fn draw(target: &ComplexImage<T>, rng: &mut Rng, cfg: &TrainConfig) -> Result<Self> {
        let target = if cfg.augment {
            augment(rng, target)?
        } else {
            target.clone()
        };
        let (h, w) = target.dims();
        let mask = generate_mask(rng, h, w, &cfg.mask_params())?;
        let meas = apply_encoding(&target, &mask)?;
        Ok(Self::new(target, meas))
    }
}

/// Loss and parameter gradients for one sample.
pub fn sample_gradients<T: Scalar>(model: &CascadeModel<T>, sample: &Sample<T>) -> Result<(T, ParamGrads<T>)> {
    let (out, cache) = model.forward(&sample.x_u, &sample.meas)?;
    let (loss, grad) = mse_loss(&out, &sample.target)?;
    let grads = model.backward(&cache, &grad)?;
    Ok((loss, grads))
}

/// Mean loss and mean gradient over a batch. Samples are processed in
/// parallel; the reduction runs in index order so results do not depend on
/// the number of workers.
pub fn batch_gradients<T: Scalar>(model: &CascadeModel<T>, batch: &[Sample<T>]) -> Result<(f64, ParamGrads<T>)> {
    if batch.is_empty() {
        return Err(param_err("empty batch"));
    }
    let per_sample: Vec<(T, ParamGrads<T>)> = batch
        .par_iter()
        .map(|s| sample_gradients(model, s))
        .collect::<Result<_>>()?;
    let mut total = model.zero_grads();
    let mut loss = 0.0;
    for (l, g) in &per_sample {
        loss += l.as_f64();
        total.accumulate(g)?;
    }
    let n = batch.len() as f64;
    total.scale(T::of(1.0 / n));
    Ok((loss / n, total))
}

pub fn batch_loss<T: Scalar>(model: &CascadeModel<T>, batch: &[Sample<T>]) -> Result<f64> {
    let losses: Vec<f64> = batch
        .par_iter()
        .map(|s| {
            let out = model.reconstruct(&s.x_u, &s.meas)?;
            mse(&out, &s.target)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: usize,
    pub distinct_masks: usize,
}

/// Model plus optimiser state, RNG stream, counters and optional log.
pub struct Trainer<T> {
    pub model: CascadeModel<T>,
    pub adam: AdamState<T>,
    pub cfg: TrainConfig,
    rng: Rng,
    epoch: usize,
    step: usize,
    started: Instant,
    log: Option<Box<dyn Write + Send>>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: CascadeModel<T>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = AdamState::new(&model);
        let rng = Rng::new(cfg.seed).derive(1);
        Ok(Self {
            model,
            adam,
            cfg,
            rng,
            epoch: 0,
            step: 0,
            started: Instant::now(),
            log: None,
        })
    }

    /// Appends `epoch,step,loss,wallclock_ms` lines to `log`.
    pub fn with_log(mut self, log: Box<dyn Write + Send>) -> Self {
        self.log = Some(log);
        self
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn into_model(self) -> CascadeModel<T> {
        self.model
    }

    /// One pass over `dataset` in shuffled minibatches.
    pub fn train_epoch(&mut self, dataset: &[ComplexImage<T>]) -> Result<EpochStats> {
        if dataset.is_empty() {
            return Err(param_err("empty training set"));
        }
        let epoch = self.epoch + 1;
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        self.rng.shuffle(&mut order);

        let mut masks = std::collections::HashSet::new();
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let seeds: Vec<u64> = chunk.iter().map(|_| self.rng.next_u64()).collect();
            let batch: Vec<Sample<T>> = chunk
                .par_iter()
                .zip(&seeds)
                .map(|(&idx, &seed)| Sample::draw(&dataset[idx], &mut Rng::new(seed), &self.cfg))
                .collect::<Result<_>>()?;
            masks.extend(batch.iter().map(|s| s.meas.mask.lines().to_vec()));

            let (loss, grads) = batch_gradients(&self.model, &batch)?;
            self.step += 1;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: self.step,
                    loss,
                });
            }
            adam_step(&mut self.model, &grads, &mut self.adam, &self.cfg)?;
            loss_sum += loss * chunk.len() as f64;
            steps += 1;

            if let Some(log) = self.log.as_mut() {
                writeln!(
                    log,
                    "{epoch},{},{loss:.9e},{}",
                    self.step,
                    self.started.elapsed().as_millis()
                )?;
            }
        }
        if let Some(log) = self.log.as_mut() {
            log.flush()?;
        }
        self.epoch = epoch;
        Ok(EpochStats {
            epoch,
            mean_loss: loss_sum / dataset.len() as f64,
            steps,
            distinct_masks: masks.len(),
        })
    }
}

/// Free-function form of [`Trainer::train_epoch`].
pub fn train_epoch<T: Scalar>(trainer: &mut Trainer<T>, dataset: &[ComplexImage<T>]) -> Result<EpochStats> {
    trainer.train_epoch(dataset)
}
