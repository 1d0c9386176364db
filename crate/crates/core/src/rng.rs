//! Seeded, portable random number generation.
//!
//! Backed by ChaCha8, whose output stream is fixed by the seed on every
//! platform, so masks, phantoms and initial weights are reproducible.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::tensor::{check_std, Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

/// SplitMix64 finalizer; used to derive independent child seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for sub-stream `stream`, without advancing `self`.
    pub fn derive(&self, stream: u64) -> Rng {
        Rng::new(mix_seed(self.seed, stream))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`. `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// I.i.d. zero-mean normal samples with standard deviation `std`.
///
/// Each element is `std * z` for a fixed standard-normal stream `z`, so
/// draws at different `std` from the same seed differ only by scale.
pub fn normal_draw<T: Scalar>(rng: &mut Rng, shape: &[usize], std: f64) -> Result<Tensor<T>> {
    check_std(std)?;
    let mut t = Tensor::zeros(shape)?;
    let s = T::of(std);
    for x in t.data_mut() {
        *x = T::of(rng.standard_normal()) * s;
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_mean_is_near_zero() {
        let t: Tensor<f64> = normal_draw(&mut Rng::new(42), &[10_000], 1.0).unwrap();
        let mean = t.data().iter().sum::<f64>() / t.len() as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn same_seed_same_tensor() {
        let a: Tensor<f32> = normal_draw(&mut Rng::new(7), &[64], 1.0).unwrap();
        let b: Tensor<f32> = normal_draw(&mut Rng::new(7), &[64], 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn std_scales_the_stream_exactly() {
        let a: Tensor<f64> = normal_draw(&mut Rng::new(3), &[256], 1.0).unwrap();
        let b: Tensor<f64> = normal_draw(&mut Rng::new(3), &[256], 2.0).unwrap();
        for (&x, &y) in a.data().iter().zip(b.data()) {
            assert_eq!(y, 2.0 * x);
        }
    }

    #[test]
    fn rejects_nonpositive_std() {
        assert!(normal_draw::<f64>(&mut Rng::new(0), &[4], 0.0).is_err());
        assert!(normal_draw::<f64>(&mut Rng::new(0), &[4], -1.0).is_err());
    }

    #[test]
    fn derived_streams_differ() {
        let root = Rng::new(11);
        let mut a = root.derive(0);
        let mut b = root.derive(1);
        assert_ne!(a.next_u64(), b.next_u64());
        assert_eq!(root.derive(5).next_u64(), root.derive(5).next_u64());
    }
}
