//! Cartesian undersampling: variable-density phase-encode masks, the
//! undersampled encoding operator and zero-filled reconstruction.
//!
//! Phase encoding runs along image rows (the height axis). A mask selects
//! whole rows of k-space; each selected row is fully sampled across the
//! width. Line offsets are measured in centred (fft-shifted) order, where
//! offset `o` in `-H/2..H/2` lives at unshifted row `o mod H`.

use crate::error::{param_err, shape_err, Result};
use crate::fourier::{fft2, ifft2, KSpace};
use crate::io::AnyTensor;
use crate::rng::Rng;
use crate::tensor::{ComplexImage, Scalar, Tensor};

/// Default Gaussian width of the line-selection density, as a fraction of H.
pub const DEFAULT_STD_FRACTION: f64 = 1.0 / 6.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    height: usize,
    width: usize,
    /// Indexed by unshifted k-space row.
    lines: Vec<bool>,
    acceleration: f64,
    n_low: usize,
}

/// Parameters for [`generate_mask`] beyond the image size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskParams {
    pub acceleration: f64,
    pub n_low: usize,
    /// Standard deviation of the selection density over centred line
    /// offset, in units of H.
    pub std_fraction: f64,
}

impl MaskParams {
    pub fn new(acceleration: f64, n_low: usize) -> Self {
        Self {
            acceleration,
            n_low,
            std_fraction: DEFAULT_STD_FRACTION,
        }
    }
}

/// Unshifted row index of centred offset `offset`.
pub fn row_of_offset(offset: isize, height: usize) -> usize {
    offset.rem_euclid(height as isize) as usize
}

/// Centred offset of unshifted row `row`, in `-H/2..H/2`.
pub fn offset_of_row(row: usize, height: usize) -> isize {
    let h = height as isize;
    let r = row as isize;
    if r < h / 2 {
        r
    } else {
        r - h
    }
}

/// Centred offsets of the always-acquired low-frequency band.
pub fn center_band(n_low: usize) -> impl Iterator<Item = isize> {
    let start = -((n_low / 2) as isize);
    (0..n_low as isize).map(move |j| start + j)
}

/// Number of lines acquired at the given acceleration: round(H / R).
pub fn line_budget(height: usize, acceleration: f64) -> usize {
    (height as f64 / acceleration).round() as usize
}

impl SamplingMask {
    /// Builds a mask from an explicit per-row pattern.
    pub fn from_lines(width: usize, lines: Vec<bool>) -> Result<Self> {
        let height = lines.len();
        if height < 4 || height % 2 != 0 || width < 4 || width % 2 != 0 {
            return Err(shape_err(format!(
                "mask dims {height}x{width} must be even and at least 4"
            )));
        }
        let count = lines.iter().filter(|&&b| b).count();
        let acceleration = if count == 0 {
            f64::INFINITY
        } else {
            height as f64 / count as f64
        };
        Ok(Self {
            height,
            width,
            lines,
            acceleration,
            n_low: 0,
        })
    }

    pub fn full(height: usize, width: usize) -> Result<Self> {
        Self::from_lines(width, vec![true; height])
    }

    pub fn empty(height: usize, width: usize) -> Result<Self> {
        Self::from_lines(width, vec![false; height])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn lines(&self) -> &[bool] {
        &self.lines
    }

    pub fn acceleration(&self) -> f64 {
        self.acceleration
    }

    pub fn n_low(&self) -> usize {
        self.n_low
    }

    pub fn is_sampled(&self, row: usize) -> bool {
        self.lines[row]
    }

    pub fn sampled_lines(&self) -> usize {
        self.lines.iter().filter(|&&b| b).count()
    }

    /// Zeroes every coefficient on an unsampled row.
    pub fn restrict<T: Scalar>(&self, k: &mut KSpace<T>) {
        let w = self.width;
        let (re, im) = k.planes_mut();
        for (row, &keep) in self.lines.iter().enumerate() {
            if !keep {
                re[row * w..(row + 1) * w].fill(T::zero());
                im[row * w..(row + 1) * w].fill(T::zero());
            }
        }
    }

    /// The mask as a `[H]` tensor of 0/1 values.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self
            .lines
            .iter()
            .map(|&b| if b { T::one() } else { T::zero() })
            .collect();
        Tensor::from_vec(&[self.height], data).expect("mask height is nonzero")
    }

    /// Reads a `[H]` tensor of 0/1 values (any nonzero counts as sampled).
    pub fn from_tensor(t: &AnyTensor, width: usize) -> Result<Self> {
        if t.shape().len() != 1 {
            return Err(shape_err(format!(
                "mask tensor must have rank 1, got shape {:?}",
                t.shape()
            )));
        }
        let t: Tensor<f64> = t.clone().into_precision();
        Self::from_lines(width, t.data().iter().map(|&x| x != 0.0).collect())
    }

    fn expect_dims(&self, dims: (usize, usize)) -> Result<()> {
        if self.dims() == dims {
            Ok(())
        } else {
            Err(shape_err(format!(
                "mask is {:?}, image is {dims:?}",
                self.dims()
            )))
        }
    }
}

/// Draws a variable-density Cartesian mask.
///
/// The `n_low` lines around DC are always taken. The rest of the budget,
/// round(H / acceleration) lines in total, is drawn without replacement with
/// probability proportional to a zero-mean Gaussian over centred offset.
pub fn generate_mask(
    rng: &mut Rng,
    height: usize,
    width: usize,
    params: &MaskParams,
) -> Result<SamplingMask> {
    let MaskParams {
        acceleration,
        n_low,
        std_fraction,
    } = *params;
    if !(acceleration >= 1.0) || !acceleration.is_finite() {
        return Err(param_err(format!("acceleration must be >= 1, got {acceleration}")));
    }
    if !(std_fraction > 0.0) {
        return Err(param_err(format!("std fraction must be > 0, got {std_fraction}")));
    }
    let mut mask = SamplingMask::empty(height, width)?;
    let budget = line_budget(height, acceleration);
    if n_low > budget {
        return Err(param_err(format!(
            "{n_low} low-frequency lines exceed the budget of {budget} at {acceleration}x"
        )));
    }

    for offset in center_band(n_low) {
        mask.lines[row_of_offset(offset, height)] = true;
    }

    let sigma = std_fraction * height as f64;
    let mut candidates: Vec<(usize, f64)> = (0..height)
        .filter(|&row| !mask.lines[row])
        .map(|row| {
            let o = offset_of_row(row, height) as f64;
            (row, (-0.5 * (o / sigma).powi(2)).exp())
        })
        .collect();

    for _ in n_low..budget {
        let total: f64 = candidates.iter().map(|c| c.1).sum();
        let target = rng.uniform() * total;
        let mut acc = 0.0;
        // Falls back to the last candidate if rounding leaves target ≥ acc.
        let mut pick = candidates.len() - 1;
        for (idx, &(_, wgt)) in candidates.iter().enumerate() {
            acc += wgt;
            if target < acc {
                pick = idx;
                break;
            }
        }
        let (row, _) = candidates.swap_remove(pick);
        mask.lines[row] = true;
    }

    mask.acceleration = acceleration;
    mask.n_low = n_low;
    Ok(mask)
}

/// Undersampled k-space `y` together with the mask it was acquired on.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurements<T> {
    pub kspace: KSpace<T>,
    pub mask: SamplingMask,
}

impl<T: Scalar> Measurements<T> {
    /// Wraps k-space that may hold data off the mask, zeroing it there.
    pub fn new(mut kspace: KSpace<T>, mask: SamplingMask) -> Result<Self> {
        mask.expect_dims(kspace.dims())?;
        mask.restrict(&mut kspace);
        Ok(Self { kspace, mask })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.kspace.dims()
    }
}

/// `F_u x`: the full DFT restricted to the sampled lines.
pub fn apply_encoding<T: Scalar>(
    img: &ComplexImage<T>,
    mask: &SamplingMask,
) -> Result<Measurements<T>> {
    mask.expect_dims(img.dims())?;
    Measurements::new(fft2(img), mask.clone())
}

/// `x_u = F_u^H y`.
pub fn zero_filled<T: Scalar>(meas: &Measurements<T>) -> ComplexImage<T> {
    ifft2(&meas.kspace)
}
