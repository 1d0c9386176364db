//! Test-set evaluation: fixed per-image masks, MSE reports and error maps.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::cascade::CascadeModel;
use crate::error::Result;
use crate::io::{quantize_unit, write_pgm};
use crate::rng::{mix_seed, Rng};
use crate::sampling::{apply_encoding, generate_mask, zero_filled, MaskParams, SamplingMask};
use crate::tensor::{ComplexImage, Scalar};
use crate::training::mse;

/// The fixed mask assigned to test image `index`.
pub fn fixed_mask(mask_seed: u64, index: usize, height: usize, width: usize, params: &MaskParams) -> Result<SamplingMask> {
    let mut rng = Rng::new(mix_seed(mask_seed, index as u64));
    generate_mask(&mut rng, height, width, params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalEntry {
    pub image_id: String,
    pub mse: f64,
    pub zero_filled_mse: f64,
    pub recon_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model_id: String,
    pub acceleration: f64,
    pub entries: Vec<EvalEntry>,
}

/// Mean and sample standard deviation (n − 1 denominator; 0 for n ≤ 1).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

impl EvalReport {
    pub fn mse_stats(&self) -> (f64, f64) {
        mean_sd(&self.entries.iter().map(|e| e.mse).collect::<Vec<_>>())
    }

    pub fn zero_filled_stats(&self) -> (f64, f64) {
        mean_sd(&self.entries.iter().map(|e| e.zero_filled_mse).collect::<Vec<_>>())
    }

    pub fn recon_ms_stats(&self) -> (f64, f64) {
        mean_sd(&self.entries.iter().map(|e| e.recon_ms).collect::<Vec<_>>())
    }

    /// `image_id,mse,zero_filled_mse`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("image_id,mse,zero_filled_mse\n");
        for e in &self.entries {
            let _ = writeln!(s, "{},{:e},{:e}", e.image_id, e.mse, e.zero_filled_mse);
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model: {}", self.model_id);
        let _ = writeln!(s, "acceleration: {}x", self.acceleration);
        let _ = writeln!(s, "{:<24} {:>14} {:>14} {:>10}", "image", "MSE x1e-3", "ZF MSE x1e-3", "ms");
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{:<24} {:>14.4} {:>14.4} {:>10.2}",
                e.image_id,
                e.mse * 1e3,
                e.zero_filled_mse * 1e3,
                e.recon_ms
            );
        }
        let (m, sd) = self.mse_stats();
        let (zm, zsd) = self.zero_filled_stats();
        let (tm, tsd) = self.recon_ms_stats();
        let _ = writeln!(s, "CNN          MSE (SD) x1e-3: {:.4} ({:.4})", m * 1e3, sd * 1e3);
        let _ = writeln!(s, "zero-filled  MSE (SD) x1e-3: {:.4} ({:.4})", zm * 1e3, zsd * 1e3);
        let _ = writeln!(s, "reconstruction time per image: {tm:.2} ms ({tsd:.2})");
        s
    }
}

/// Per-image outputs kept for error-map rendering.
#[derive(Debug, Clone)]
pub struct Reconstruction<T> {
    pub target: ComplexImage<T>,
    pub zero_filled: ComplexImage<T>,
    pub recon: ComplexImage<T>,
}

/// Reconstructs every image under its fixed mask. Runs sequentially so the
/// per-image timings reflect a single worker.
pub fn evaluate<T: Scalar>(
    model: &CascadeModel<T>,
    model_id: &str,
    images: &[(String, ComplexImage<T>)],
    params: &MaskParams,
    mask_seed: u64,
) -> Result<(EvalReport, Vec<Reconstruction<T>>)> {
    let mut entries = Vec::with_capacity(images.len());
    let mut recons = Vec::with_capacity(images.len());
    for (index, (id, target)) in images.iter().enumerate() {
        let (h, w) = target.dims();
        let mask = fixed_mask(mask_seed, index, h, w, params)?;
        let meas = apply_encoding(target, &mask)?;
        let start = Instant::now();
        let x_u = zero_filled(&meas);
        let recon = model.reconstruct(&x_u, &meas)?;
        let recon_ms = start.elapsed().as_secs_f64() * 1e3;
        entries.push(EvalEntry {
            image_id: id.clone(),
            mse: mse(&recon, target)?,
            zero_filled_mse: mse(&x_u, target)?,
            recon_ms,
        });
        recons.push(Reconstruction {
            target: target.clone(),
            zero_filled: x_u,
            recon,
        });
    }
    Ok((
        EvalReport {
            model_id: model_id.to_string(),
            acceleration: params.acceleration,
            entries,
        },
        recons,
    ))
}

fn max_magnitude<T: Scalar>(img: &ComplexImage<T>) -> f64 {
    img.magnitude().iter().fold(0.0, |a, &m| a.max(m.as_f64()))
}

/// clip(5·|recon − target| / max|target|, 0, 1) quantized to 8 bits.
pub fn error_map<T: Scalar>(recon: &ComplexImage<T>, target: &ComplexImage<T>) -> Result<Vec<u8>> {
    let diff = recon.sub(target)?;
    let peak = max_magnitude(target);
    Ok(diff
        .magnitude()
        .iter()
        .map(|&d| quantize_unit(if peak > 0.0 { 5.0 * d.as_f64() / peak } else { 0.0 }))
        .collect())
}

/// |img| / scale, clipped and quantized to 8 bits.
pub fn magnitude_map<T: Scalar>(img: &ComplexImage<T>, scale: f64) -> Vec<u8> {
    img.magnitude()
        .iter()
        .map(|&m| quantize_unit(if scale > 0.0 { m.as_f64() / scale } else { 0.0 }))
        .collect()
}

/// Writes `<id>_{original,zero_filled,recon,error_x5}.pgm` into `dir`.
pub fn write_maps<T: Scalar>(dir: &Path, id: &str, r: &Reconstruction<T>) -> Result<()> {
    let (h, w) = r.target.dims();
    let peak = max_magnitude(&r.target);
    write_pgm(dir.join(format!("{id}_original.pgm")), w, h, &magnitude_map(&r.target, peak))?;
    write_pgm(dir.join(format!("{id}_zero_filled.pgm")), w, h, &magnitude_map(&r.zero_filled, peak))?;
    write_pgm(dir.join(format!("{id}_recon.pgm")), w, h, &magnitude_map(&r.recon, peak))?;
    write_pgm(dir.join(format!("{id}_error_x5.pgm")), w, h, &error_map(&r.recon, &r.target)?)?;
    Ok(())
}
