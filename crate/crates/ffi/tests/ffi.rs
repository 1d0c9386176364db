use std::ffi::{CStr, CString};
use std::ptr;

use cascade_recon_ffi::*;

const DESK: CrHyper = CrHyper {
    n_c: 2,
    n_d: 3,
    n_f: 4,
    kernel: 3,
};

fn last_error() -> String {
    unsafe { CStr::from_ptr(cr_last_error()) }.to_string_lossy().into_owned()
}

fn new_model(seed: u64) -> *mut CrModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { cr_model_he_init(DESK, seed, &mut m) }, CrStatus::Ok);
    assert!(!m.is_null());
    m
}

fn test_image(h: usize, w: usize) -> (Vec<f32>, Vec<f32>) {
    let re = (0..h * w).map(|i| ((i * 7) % 11) as f32 / 11.0).collect();
    let im = (0..h * w).map(|i| ((i * 3) % 5) as f32 / 10.0 - 0.2).collect();
    (re, im)
}

#[test]
fn save_load_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    let m = new_model(3);
    assert_eq!(unsafe { cr_model_save(m, path.as_ptr()) }, CrStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { cr_model_load(path.as_ptr(), &mut back) }, CrStatus::Ok);
    let mut h = CrHyper { n_c: 0, n_d: 0, n_f: 0, kernel: 0 };
    assert_eq!(unsafe { cr_model_hyper(back, &mut h) }, CrStatus::Ok);
    assert_eq!(h, DESK);
    unsafe {
        cr_model_free(m);
        cr_model_free(back);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let mut m = ptr::null_mut();
    let missing = CString::new("/nonexistent/dir/m.ckpt").unwrap();
    assert_eq!(unsafe { cr_model_load(missing.as_ptr(), &mut m) }, CrStatus::IoError);
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { cr_model_load(ptr::null(), &mut m) }, CrStatus::NullPointer);
    assert!(last_error().contains("path"));
    let even = CrHyper { kernel: 4, ..DESK };
    assert_eq!(unsafe { cr_model_he_init(even, 0, &mut m) }, CrStatus::InvalidParameter);
    assert!(m.is_null());
    let mut lines = [0u8; 8];
    assert_eq!(
        unsafe { cr_mask_generate(8, 8, 0.5, 2, 0, lines.as_mut_ptr()) },
        CrStatus::InvalidParameter
    );
    assert_eq!(unsafe { cr_mask_generate(7, 8, 2.0, 2, 0, lines.as_mut_ptr()) }, CrStatus::InvalidShape);
    let ok = new_model(0);
    assert_eq!(last_error(), "");
    unsafe { cr_model_free(ok) };
}

#[test]
fn mask_has_budgeted_rows() {
    let mut lines = vec![0u8; 64];
    assert_eq!(unsafe { cr_mask_generate(64, 64, 4.0, 8, 11, lines.as_mut_ptr()) }, CrStatus::Ok);
    assert_eq!(lines.iter().filter(|&&b| b == 1).count(), 16);
    for r in [0usize, 1, 2, 3, 60, 61, 62, 63] {
        assert_eq!(lines[r], 1, "centre row {r}");
    }
}

#[test]
fn full_mask_reconstruction_returns_the_image() {
    let (h, w) = (16usize, 16usize);
    let (re, im) = test_image(h, w);
    let mask = vec![1u8; h];
    let (mut kre, mut kim) = (vec![0f32; h * w], vec![0f32; h * w]);
    let status = unsafe {
        cr_undersample(h as u32, w as u32, re.as_ptr(), im.as_ptr(), mask.as_ptr(), kre.as_mut_ptr(), kim.as_mut_ptr())
    };
    assert_eq!(status, CrStatus::Ok);
    let m = new_model(5);
    let (mut ore, mut oim) = (vec![0f32; h * w], vec![0f32; h * w]);
    let (mut zre, mut zim) = (vec![0f32; h * w], vec![0f32; h * w]);
    let status = unsafe {
        cr_reconstruct(
            m,
            h as u32,
            w as u32,
            kre.as_ptr(),
            kim.as_ptr(),
            mask.as_ptr(),
            ore.as_mut_ptr(),
            oim.as_mut_ptr(),
            zre.as_mut_ptr(),
            zim.as_mut_ptr(),
        )
    };
    assert_eq!(status, CrStatus::Ok);
    for i in 0..h * w {
        assert!((ore[i] - re[i]).abs() < 1e-5 && (oim[i] - im[i]).abs() < 1e-5);
        assert!((zre[i] - re[i]).abs() < 1e-5 && (zim[i] - im[i]).abs() < 1e-5);
    }
    unsafe { cr_model_free(m) };
}

#[test]
fn undersampling_zeroes_unsampled_rows() {
    let (h, w) = (8usize, 8usize);
    let (re, im) = test_image(h, w);
    let mut mask = vec![0u8; h];
    mask[0] = 1;
    mask[3] = 1;
    let (mut full_re, mut full_im) = (vec![0f32; h * w], vec![0f32; h * w]);
    unsafe { cr_fft2(h as u32, w as u32, re.as_ptr(), im.as_ptr(), full_re.as_mut_ptr(), full_im.as_mut_ptr()) };
    let (mut kre, mut kim) = (vec![0f32; h * w], vec![0f32; h * w]);
    let status = unsafe {
        cr_undersample(h as u32, w as u32, re.as_ptr(), im.as_ptr(), mask.as_ptr(), kre.as_mut_ptr(), kim.as_mut_ptr())
    };
    assert_eq!(status, CrStatus::Ok);
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if mask[r] == 1 {
                assert_eq!((kre[i], kim[i]), (full_re[i], full_im[i]));
            } else {
                assert_eq!((kre[i], kim[i]), (0.0, 0.0));
            }
        }
    }
}

#[test]
fn version_is_reported() {
    let v = unsafe { CStr::from_ptr(cr_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let cc = match which_cc() {
        Some(cc) => cc,
        None => return,
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"cascade_recon.h\"\n\
         int main(void) {\n\
           CrModel *m = 0;\n\
           CrHyper h = {3, 3, 16, 3};\n\
           CrStatus s = cr_model_he_init(h, 1, &m);\n\
           cr_model_free(m);\n\
           return s == CR_STATUS_OK ? 0 : 1;\n\
         }\n",
    )
    .unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let status = std::process::Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", include])
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}

fn which_cc() -> Option<&'static str> {
    ["cc", "clang", "gcc"].into_iter().find(|c| {
        std::process::Command::new(c)
            .arg("--version")
            .output()
            .is_ok_and(|o| o.status.success())
    })
}
