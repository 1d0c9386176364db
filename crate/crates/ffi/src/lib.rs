//! C ABI over `cascade_recon`.
//!
//! Models are opaque `CrModel` handles holding single-precision parameters.
//! Every fallible call returns a `CrStatus`; on failure the message is
//! available from `cr_last_error` on the same thread. Images and k-space are
//! passed as separate row-major real and imaginary planes of `height * width`
//! floats, with the DC coefficient at index 0. Masks are `height` bytes, one
//! per phase-encode row, nonzero meaning sampled.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::slice;

use cascade_recon::checkpoint::{load_checkpoint, save_checkpoint};
use cascade_recon::pipeline::initial_model;
use cascade_recon::{
    apply_encoding, fft2, generate_mask, zero_filled, CascadeModel, ComplexImage, Error, Hyper, KSpace, Lambda,
    MaskParams, Measurements, Rng, SamplingMask,
};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrStatus {
    Ok = 0,
    InvalidShape = 1,
    InvalidParameter = 2,
    InvalidState = 3,
    FormatError = 4,
    Diverged = 5,
    IoError = 6,
    NullPointer = 7,
    Panic = 8,
}

/// Architecture of a model.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrHyper {
    pub n_c: u32,
    pub n_d: u32,
    pub n_f: u32,
    pub kernel: u32,
}

/// Opaque model handle.
pub struct CrModel {
    model: CascadeModel<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> CrStatus {
    match err {
        Error::InvalidShape(_) => CrStatus::InvalidShape,
        Error::InvalidParameter(_) => CrStatus::InvalidParameter,
        Error::InvalidState(_) => CrStatus::InvalidState,
        Error::TensorFormat(_) | Error::CheckpointFormat(_) => CrStatus::FormatError,
        Error::Diverged { .. } => CrStatus::Diverged,
        Error::Io(_) => CrStatus::IoError,
    }
}

enum Failure {
    Core(Error),
    Null(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            CrStatus::Ok
        }
        Ok(Err(Failure::Core(e))) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_last_error(&format!("null pointer: {what}"));
            CrStatus::NullPointer
        }
        Err(_) => {
            set_last_error("internal panic");
            CrStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::InvalidParameter(format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn model_ref<'a>(m: *const CrModel) -> Result<&'a CrModel, Failure> {
    m.as_ref().ok_or(Failure::Null("model"))
}

unsafe fn plane<'a>(p: *const f32, len: usize, what: &'static str) -> Result<&'a [f32], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn plane_mut<'a>(p: *mut f32, len: usize, what: &'static str) -> Result<&'a mut [f32], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

fn pixels(height: u32, width: u32) -> Result<usize, Failure> {
    (height as usize)
        .checked_mul(width as usize)
        .ok_or_else(|| Error::InvalidShape("image too large".into()).into())
}

unsafe fn read_mask(lines: *const u8, height: u32, width: u32) -> Result<SamplingMask, Failure> {
    if lines.is_null() {
        return Err(Failure::Null("mask"));
    }
    let rows = slice::from_raw_parts(lines, height as usize);
    Ok(SamplingMask::from_lines(width as usize, rows.iter().map(|&b| b != 0).collect())?)
}

fn put_handle(out: *mut *mut CrModel, model: CascadeModel<f32>) -> Result<(), Failure> {
    unsafe { *out = Box::into_raw(Box::new(CrModel { model })) };
    Ok(())
}

/// Message of the last failed call on this thread, or "" after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn cr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint, converting its parameters to single precision.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cr_model_load(path: *const c_char, out: *mut *mut CrModel) -> CrStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let path = path_arg(path, "path")?;
        put_handle(out, load_checkpoint::<f32>(path)?)
    })
}

/// He-initialised model with hard data consistency.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cr_model_he_init(hyper: CrHyper, seed: u64, out: *mut *mut CrModel) -> CrStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let hyper = Hyper {
            n_c: hyper.n_c as usize,
            n_d: hyper.n_d as usize,
            n_f: hyper.n_f as usize,
            kernel: hyper.kernel as usize,
        };
        put_handle(out, initial_model(hyper, Lambda::Infinite, seed)?)
    })
}

/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cr_model_save(model: *const CrModel, path: *const c_char) -> CrStatus {
    guard(|| {
        let m = model_ref(model)?;
        let path = path_arg(path, "path")?;
        Ok(save_checkpoint(&m.model, path)?)
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cr_model_free(model: *mut CrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cr_model_hyper(model: *const CrModel, out: *mut CrHyper) -> CrStatus {
    guard(|| {
        let h = model_ref(model)?.model.hyper();
        let out = out.as_mut().ok_or(Failure::Null("out"))?;
        *out = CrHyper {
            n_c: h.n_c as u32,
            n_d: h.n_d as u32,
            n_f: h.n_f as u32,
            kernel: h.kernel as u32,
        };
        Ok(())
    })
}

/// Variable-density mask: `n_low` centre rows plus Gaussian-weighted rows up
/// to `round(height / acceleration)` in total.
///
/// # Safety
/// `lines_out` must hold `height` bytes.
#[no_mangle]
pub unsafe extern "C" fn cr_mask_generate(
    height: u32,
    width: u32,
    acceleration: f64,
    n_low: u32,
    seed: u64,
    lines_out: *mut u8,
) -> CrStatus {
    guard(|| {
        if lines_out.is_null() {
            return Err(Failure::Null("lines_out"));
        }
        let params = MaskParams::new(acceleration, n_low as usize);
        let mask = generate_mask(&mut Rng::new(seed), height as usize, width as usize, &params)?;
        let out = slice::from_raw_parts_mut(lines_out, height as usize);
        for (o, &s) in out.iter_mut().zip(mask.lines()) {
            *o = s as u8;
        }
        Ok(())
    })
}

/// Orthonormal 2D DFT of an image restricted to the mask rows.
///
/// # Safety
/// All planes hold `height * width` floats; `mask` holds `height` bytes.
#[no_mangle]
pub unsafe extern "C" fn cr_undersample(
    height: u32,
    width: u32,
    image_re: *const f32,
    image_im: *const f32,
    mask: *const u8,
    kspace_re: *mut f32,
    kspace_im: *mut f32,
) -> CrStatus {
    guard(|| {
        let n = pixels(height, width)?;
        let img = ComplexImage::from_parts(
            height as usize,
            width as usize,
            plane(image_re, n, "image_re")?,
            plane(image_im, n, "image_im")?,
        )?;
        let mask = read_mask(mask, height, width)?;
        let meas = apply_encoding(&img, &mask)?;
        plane_mut(kspace_re, n, "kspace_re")?.copy_from_slice(meas.kspace.re());
        plane_mut(kspace_im, n, "kspace_im")?.copy_from_slice(meas.kspace.im());
        Ok(())
    })
}

/// Reconstructs an image from undersampled k-space. Coefficients outside the
/// mask rows are ignored. `zf_re`/`zf_im` may be null; when given they receive
/// the zero-filled image.
///
/// # Safety
/// `model` must come from this library; all non-null planes hold
/// `height * width` floats; `mask` holds `height` bytes.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn cr_reconstruct(
    model: *const CrModel,
    height: u32,
    width: u32,
    kspace_re: *const f32,
    kspace_im: *const f32,
    mask: *const u8,
    out_re: *mut f32,
    out_im: *mut f32,
    zf_re: *mut f32,
    zf_im: *mut f32,
) -> CrStatus {
    guard(|| {
        let m = model_ref(model)?;
        let n = pixels(height, width)?;
        let coeffs = ComplexImage::from_parts(
            height as usize,
            width as usize,
            plane(kspace_re, n, "kspace_re")?,
            plane(kspace_im, n, "kspace_im")?,
        )?;
        let mask = read_mask(mask, height, width)?;
        let meas = Measurements::new(KSpace::from_raw(coeffs), mask)?;
        let x_u = zero_filled(&meas);
        let recon = m.model.reconstruct(&x_u, &meas)?;
        plane_mut(out_re, n, "out_re")?.copy_from_slice(recon.re());
        plane_mut(out_im, n, "out_im")?.copy_from_slice(recon.im());
        if !zf_re.is_null() && !zf_im.is_null() {
            slice::from_raw_parts_mut(zf_re, n).copy_from_slice(x_u.re());
            slice::from_raw_parts_mut(zf_im, n).copy_from_slice(x_u.im());
        }
        Ok(())
    })
}

/// Forward orthonormal 2D DFT (DC at index 0).
///
/// # Safety
/// All planes hold `height * width` floats.
#[no_mangle]
pub unsafe extern "C" fn cr_fft2(
    height: u32,
    width: u32,
    in_re: *const f32,
    in_im: *const f32,
    out_re: *mut f32,
    out_im: *mut f32,
) -> CrStatus {
    guard(|| {
        let n = pixels(height, width)?;
        let img = ComplexImage::from_parts(
            height as usize,
            width as usize,
            plane(in_re, n, "in_re")?,
            plane(in_im, n, "in_im")?,
        )?;
        let k = fft2(&img);
        plane_mut(out_re, n, "out_re")?.copy_from_slice(k.re());
        plane_mut(out_im, n, "out_im")?.copy_from_slice(k.im());
        Ok(())
    })
}
