#![allow(dead_code)]

use cascade_recon::rng::normal_draw;
use cascade_recon::{ComplexImage, Rng, Scalar};

pub fn random_image<T: Scalar>(rng: &mut Rng, h: usize, w: usize) -> ComplexImage<T> {
    ComplexImage::from_tensor(normal_draw(rng, &[2, h, w], 1.0).unwrap()).unwrap()
}

pub fn max_abs_diff<T: Scalar>(a: &ComplexImage<T>, b: &ComplexImage<T>) -> f64 {
    a.as_tensor().max_abs_diff(b.as_tensor()).unwrap().as_f64()
}

/// |a - b| / max(|a|, |b|, floor) over paired slices.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
