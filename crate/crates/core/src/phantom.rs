//! Synthetic complex-valued phantoms: random rotated ellipses with constant
//! intensities, clipped to [0, 1], under a smooth quadratic phase field.

use std::f64::consts::PI;

use crate::error::{param_err, Result};
use crate::rng::{mix_seed, Rng};
use crate::tensor::{ComplexImage, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub n_ellipses: usize,
    pub intensity_min: f64,
    pub intensity_max: f64,
    /// Bound on the quadratic phase coefficients, in radians.
    pub phase_amplitude: f64,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn new(height: usize, width: usize, seed: u64) -> Self {
        Self {
            height,
            width,
            n_ellipses: 6,
            intensity_min: 0.1,
            intensity_max: 1.0,
            phase_amplitude: 1.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0 <= self.intensity_min && self.intensity_min <= self.intensity_max) {
            return Err(param_err("intensity range must satisfy 0 <= min <= max"));
        }
        if !(self.phase_amplitude >= 0.0 && self.phase_amplitude.is_finite()) {
            return Err(param_err("phase amplitude must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    cos: f64,
    sin: f64,
    value: f64,
}

impl Ellipse {
    fn random(rng: &mut Rng, body: bool, spec: &PhantomSpec) -> Self {
        // The first ellipse is a large "body" that the others sit inside.
        let (c, r_lo, r_hi) = if body { (0.1, 0.6, 0.85) } else { (0.5, 0.08, 0.35) };
        let theta = rng.uniform_range(0.0, PI);
        Self {
            cy: rng.uniform_range(-c, c),
            cx: rng.uniform_range(-c, c),
            ry: rng.uniform_range(r_lo, r_hi),
            rx: rng.uniform_range(r_lo, r_hi),
            cos: theta.cos(),
            sin: theta.sin(),
            value: rng.uniform_range(spec.intensity_min, spec.intensity_max),
        }
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0
    }
}

/// Wraps an angle into (−π, π].
fn wrap_phase(p: f64) -> f64 {
    let w = p - 2.0 * PI * ((p + PI) / (2.0 * PI)).floor();
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

pub fn make_phantom<T: Scalar>(spec: &PhantomSpec) -> Result<ComplexImage<T>> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut img = ComplexImage::zeros(h, w)?;
    let mut rng = Rng::new(spec.seed);
    let ellipses: Vec<Ellipse> = (0..spec.n_ellipses)
        .map(|i| Ellipse::random(&mut rng, i == 0, spec))
        .collect();
    // φ = a0 + a1·x + a2·y + a3·x² + a4·xy + a5·y² on [−1, 1]².
    let coeffs: Vec<f64> = (0..6)
        .map(|_| rng.uniform_range(-spec.phase_amplitude, spec.phase_amplitude))
        .collect();

    for i in 0..h {
        let y = (i as f64 + 0.5) / h as f64 * 2.0 - 1.0;
        for j in 0..w {
            let x = (j as f64 + 0.5) / w as f64 * 2.0 - 1.0;
            let mag: f64 = ellipses
                .iter()
                .filter(|e| e.contains(y, x))
                .map(|e| e.value)
                .sum::<f64>()
                .clamp(0.0, 1.0);
            if mag == 0.0 {
                continue;
            }
            let phi = wrap_phase(
                coeffs[0]
                    + coeffs[1] * x
                    + coeffs[2] * y
                    + coeffs[3] * x * x
                    + coeffs[4] * x * y
                    + coeffs[5] * y * y,
            );
            img.set_pixel(i, j, (T::of(mag * phi.cos()), T::of(mag * phi.sin())));
        }
    }
    Ok(img)
}

/// Generated phantoms with their per-item seeds. The first `n - n_test`
/// items form the training split, the rest the test split.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub images: Vec<ComplexImage<T>>,
    pub seeds: Vec<u64>,
    pub n_test: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn train(&self) -> &[ComplexImage<T>] {
        &self.images[..self.images.len() - self.n_test]
    }

    pub fn test(&self) -> &[ComplexImage<T>] {
        &self.images[self.images.len() - self.n_test..]
    }
}

/// Seed of item `index` derived from the master seed.
pub fn item_seed(master: u64, index: usize) -> u64 {
    mix_seed(master, index as u64 + 1)
}

pub fn make_dataset<T: Scalar>(n: usize, template: &PhantomSpec, seed: u64, n_test: usize) -> Result<Dataset<T>> {
    if n == 0 {
        return Err(param_err("dataset needs at least one image"));
    }
    if n_test > n {
        return Err(param_err(format!("{n_test} test images requested from {n}")));
    }
    let seeds: Vec<u64> = (0..n).map(|i| item_seed(seed, i)).collect();
    let images = seeds
        .iter()
        .map(|&s| make_phantom(&PhantomSpec { seed: s, ..template.clone() }))
        .collect::<Result<_>>()?;
    Ok(Dataset { images, seeds, n_test })
}
