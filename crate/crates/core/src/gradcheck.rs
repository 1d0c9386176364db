//! Central finite-difference checks of every backward pass, in f64.

use std::fmt;

use crate::cascade::{CascadeModel, Hyper};
use crate::dclayer::{dc_backward, dc_forward, DcConfig, Lambda};
use crate::error::{param_err, Result};
use crate::layers::{relu_backward, relu_forward, ConvLayer};
use crate::rng::{normal_draw, Rng};
use crate::sampling::{apply_encoding, generate_mask, zero_filled, MaskParams};
use crate::tensor::{ComplexImage, Tensor};
use crate::training::mse_loss;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    Conv,
    Relu,
    Loss,
    DcLayer,
    Cascade,
}

impl Component {
    pub const ALL: [Component; 5] = [
        Component::Conv,
        Component::Relu,
        Component::Loss,
        Component::DcLayer,
        Component::Cascade,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Conv => "conv",
            Component::Relu => "relu",
            Component::Loss => "loss",
            Component::DcLayer => "dclayer",
            Component::Cascade => "cascade",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }

    /// Pass threshold on the maximum relative error.
    pub fn threshold(self) -> f64 {
        match self {
            Component::Conv | Component::Relu | Component::Loss => 1e-5,
            Component::DcLayer => 1e-7,
            Component::Cascade => 1e-4,
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub size: usize,
    pub hyper: Hyper,
    pub step: f64,
    /// Parameters sampled for the whole-model check.
    pub cascade_samples: usize,
    /// Deliberately breaks one backward pass (negative control).
    pub corrupt: Option<Component>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            size: 16,
            hyper: Hyper {
                n_c: 2,
                n_d: 3,
                n_f: 4,
                kernel: 3,
            },
            step: 1e-5,
            cascade_samples: 50,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckRow {
    pub component: Component,
    pub max_rel_error: f64,
    pub threshold: f64,
    pub checked: usize,
}

impl GradcheckRow {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.threshold
    }
}

/// Denominator floor relative to the largest analytic gradient, so entries
/// that are numerically zero are judged on the gradient's own scale.
const SCALE_FLOOR: f64 = 1e-3;

/// max_k |a_k − n_k| / max(|a_k|, |n_k|, 1e-3·max|a|)
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().fold(0.0f64, |m, &a| m.max(a.abs()));
    let floor = (SCALE_FLOOR * scale).max(f64::MIN_POSITIVE);
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Central difference of `loss` along coordinate `k` of the tensor selected
/// by `slot` inside a clone of `base`.
fn central_diff<S: Clone>(
    base: &S,
    k: usize,
    h: f64,
    slot: impl Fn(&mut S) -> &mut Tensor<f64>,
    loss: impl Fn(&S) -> f64,
) -> f64 {
    let mut plus = base.clone();
    slot(&mut plus).data_mut()[k] += h;
    let mut minus = base.clone();
    slot(&mut minus).data_mut()[k] -= h;
    (loss(&plus) - loss(&minus)) / (2.0 * h)
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn random_image(rng: &mut Rng, n: usize) -> Result<ComplexImage<f64>> {
    ComplexImage::from_tensor(normal_draw(rng, &[2, n, n], 1.0)?)
}

fn check_conv(cfg: &GradcheckConfig, rng: &mut Rng) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, c_out) = (cfg.size, cfg.hyper.n_f);
    let mut layer = ConvLayer::<f64>::he_init(rng, c_out, 2, cfg.hyper.kernel)?;
    layer.bias = normal_draw(rng, &[c_out], 0.1)?;
    let x: Tensor<f64> = normal_draw(rng, &[2, n, n], 1.0)?;
    let r: Tensor<f64> = normal_draw(rng, &[c_out, n, n], 1.0)?;
    let (_, cache) = layer.forward(&x)?;
    let g = layer.backward(&cache, &r)?;
    let grad_in = g.input.expect("input gradient requested");

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let loss = |l: &ConvLayer<f64>, x: &Tensor<f64>| dot(&l.apply(x).unwrap(), &r);

    for k in 0..x.len() {
        analytic.push(grad_in.data()[k]);
        numeric.push(central_diff(&x, k, cfg.step, |t| t, |xp| loss(&layer, xp)));
    }
    for k in 0..layer.weight.len() {
        analytic.push(g.weight.data()[k]);
        numeric.push(central_diff(&layer, k, cfg.step, |l| &mut l.weight, |lp| loss(lp, &x)));
    }
    for k in 0..layer.bias.len() {
        analytic.push(g.bias.data()[k]);
        numeric.push(central_diff(&layer, k, cfg.step, |l| &mut l.bias, |lp| loss(lp, &x)));
    }
    Ok((analytic, numeric))
}

fn check_relu(cfg: &GradcheckConfig, rng: &mut Rng) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = cfg.size;
    // Keep every input away from the kink at zero.
    let x = normal_draw::<f64>(rng, &[cfg.hyper.n_f, n, n], 1.0)?
        .map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 });
    let r: Tensor<f64> = normal_draw(rng, x.shape(), 1.0)?;
    let (_, cache) = relu_forward(&x);
    let g = relu_backward(&cache, &r)?;
    let numeric: Vec<f64> = (0..x.len())
        .map(|k| central_diff(&x, k, cfg.step, |t| t, |xp| dot(&relu_forward(xp).0, &r)))
        .collect();
    Ok((g.into_data(), numeric))
}

fn check_loss(cfg: &GradcheckConfig, rng: &mut Rng) -> Result<(Vec<f64>, Vec<f64>)> {
    let x = random_image(rng, cfg.size)?;
    let t = random_image(rng, cfg.size)?;
    let (_, g) = mse_loss(&x, &t)?;
    let numeric: Vec<f64> = (0..x.as_tensor().len())
        .map(|k| {
            central_diff(&x, k, cfg.step, |img| img.as_tensor_mut(), |xp| mse_loss(xp, &t).unwrap().0)
        })
        .collect();
    Ok((g.into_tensor().into_data(), numeric))
}

/// The DC layer is affine, so central differences carry no truncation error
/// and a unit step keeps roundoff small.
const AFFINE_STEP: f64 = 1.0;

fn check_dc(cfg: &GradcheckConfig, rng: &mut Rng) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = cfg.size;
    let truth = random_image(rng, n)?;
    let mask = generate_mask(rng, n, n, &gradcheck_mask(n))?;
    let meas = apply_encoding(&truth, &mask)?;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for lambda in [Lambda::Finite(2.0), Lambda::Infinite] {
        let dc = DcConfig::new(lambda, &meas)?;
        let x = random_image(rng, n)?;
        let r = random_image(rng, n)?;
        let g = if cfg.corrupt == Some(Component::DcLayer) {
            r.clone()
        } else {
            dc_backward(&r, &dc)?
        };
        analytic.extend_from_slice(g.as_tensor().data());
        for k in 0..x.as_tensor().len() {
            numeric.push(central_diff(
                &x,
                k,
                AFFINE_STEP,
                |img| img.as_tensor_mut(),
                |xp| dot(dc_forward(xp, &dc).unwrap().as_tensor(), r.as_tensor()),
            ));
        }
    }
    Ok((analytic, numeric))
}

fn check_cascade(cfg: &GradcheckConfig, rng: &mut Rng) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = cfg.size;
    let target = random_image(rng, n)?;
    let mask = generate_mask(rng, n, n, &gradcheck_mask(n))?;
    let meas = apply_encoding(&target, &mask)?;
    let x_u = zero_filled(&meas);
    let mut model = CascadeModel::<f64>::he_init(rng, cfg.hyper, Lambda::Infinite)?;
    // Nonzero biases so their gradients are exercised too.
    for (name, t) in model.param_names().into_iter().zip(model.params_mut()) {
        if name.ends_with("bias") {
            *t = normal_draw(rng, t.shape(), 0.05)?;
        }
    }
    let (out, cache) = model.forward(&x_u, &meas)?;
    let (_, g) = mse_loss(&out, &target)?;
    let grads = model.backward(&cache, &g)?;

    let sizes: Vec<usize> = grads.tensors.iter().map(Tensor::len).collect();
    let total: usize = sizes.iter().sum();
    let mut picks: Vec<usize> = (0..total).collect();
    rng.shuffle(&mut picks);
    picks.truncate(cfg.cascade_samples.min(total));
    picks.sort_unstable();

    let loss = |m: &CascadeModel<f64>| {
        let out = m.reconstruct(&x_u, &meas).unwrap();
        mse_loss(&out, &target).unwrap().0
    };
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for flat in picks {
        let (mut t, mut k) = (0, flat);
        while k >= sizes[t] {
            k -= sizes[t];
            t += 1;
        }
        analytic.push(grads.tensors[t].data()[k]);
        numeric.push(central_diff(&model, k, cfg.step, |m| m.params_mut().swap_remove(t), loss));
    }
    Ok((analytic, numeric))
}

fn gradcheck_mask(n: usize) -> MaskParams {
    MaskParams::new(3.0, (n / 4).min(crate::sampling::line_budget(n, 3.0)))
}

fn row_with(component: Component, analytic: &[f64], numeric: &[f64], corrupt: Option<Component>) -> GradcheckRow {
    // The DC check corrupts its operator directly; others get a scaled gradient.
    let scaled: Vec<f64>;
    let analytic = if corrupt == Some(component) && component != Component::DcLayer {
        scaled = analytic.iter().map(|a| 1.5 * a).collect();
        &scaled
    } else {
        analytic
    };
    GradcheckRow {
        component,
        max_rel_error: max_relative_error(analytic, numeric),
        threshold: component.threshold(),
        checked: analytic.len(),
    }
}

/// Runs one component's check with its own derived random stream.
pub fn check_component(cfg: &GradcheckConfig, component: Component) -> Result<GradcheckRow> {
    let mut rng = Rng::new(cfg.seed).derive(component as u64);
    let (analytic, numeric) = match component {
        Component::Conv => check_conv(cfg, &mut rng),
        Component::Relu => check_relu(cfg, &mut rng),
        Component::Loss => check_loss(cfg, &mut rng),
        Component::DcLayer => check_dc(cfg, &mut rng),
        Component::Cascade => check_cascade(cfg, &mut rng),
    }?;
    Ok(row_with(component, &analytic, &numeric, cfg.corrupt))
}

pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<Vec<GradcheckRow>> {
    if !(cfg.step > 0.0) {
        return Err(param_err("finite-difference step must be > 0"));
    }
    cfg.hyper.validate()?;
    ComplexImage::<f64>::zeros(cfg.size, cfg.size)?;
    Component::ALL
        .into_iter()
        .map(|c| check_component(cfg, c))
        .collect()
}

pub fn format_table(rows: &[GradcheckRow]) -> String {
    let mut s = format!(
        "{:<10} {:>8} {:>14} {:>10}  result\n",
        "component", "checked", "max rel err", "threshold"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<10} {:>8} {:>14.3e} {:>10.0e}  {}\n",
            r.component.name(),
            r.checked,
            r.max_rel_error,
            r.threshold,
            if r.passed() { "PASS" } else { "FAIL" }
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_metric() {
        assert_eq!(max_relative_error(&[1.0, -2.0], &[1.0, -2.0]), 0.0);
        assert!((max_relative_error(&[1.0], &[1.1]) - 0.1 / 1.1).abs() < 1e-15);
        // Tiny entries are judged against the floor, not themselves.
        let e = max_relative_error(&[1.0, 1e-9], &[1.0, 2e-9]);
        assert!((e - 1e-9 / 1e-3).abs() < 1e-15);
    }

    #[test]
    fn component_names_roundtrip() {
        for c in Component::ALL {
            assert_eq!(Component::parse(c.name()), Some(c));
        }
        assert_eq!(Component::parse("nope"), None);
    }
}
