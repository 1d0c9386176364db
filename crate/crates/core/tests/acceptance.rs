//! Acceptance gate: one PASS/FAIL line per criterion. Runs the desk-scale
//! training through the CLI, so expect a few minutes on one core.

mod common;

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use cascade_recon::gradcheck::{run_gradcheck, GradcheckConfig};
use cascade_recon::{
    apply_encoding, fft2, generate_mask, ifft2, zero_filled, CascadeModel, ComplexImage, Hyper, Lambda, MaskParams,
    Rng, Scalar,
};
use common::random_image;

const BIN: &str = env!("CARGO_BIN_EXE_cascade-recon");
const DESK: Hyper = Hyper {
    n_c: 3,
    n_d: 3,
    n_f: 16,
    kernel: 3,
};

struct Verdict {
    id: u8,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: u8, name: &'static str, pass: bool, detail: String) -> Verdict {
    Verdict { id, name, pass, detail }
}

fn gradient_correctness() -> Verdict {
    let start = Instant::now();
    let rows = run_gradcheck(&GradcheckConfig::default()).expect("gradcheck runs");
    let secs = start.elapsed().as_secs_f64();
    let detail: Vec<String> = rows
        .iter()
        .map(|r| format!("{} {:.2e} < {:.0e}", r.component, r.max_rel_error, r.threshold))
        .collect();
    let pass = rows.len() == 5 && rows.iter().all(|r| r.passed()) && secs < 60.0;
    verdict(1, "gradient correctness", pass, format!("{}; {secs:.2} s < 60 s", detail.join(", ")))
}

/// Largest |F(out) - y| over sampled rows, for one random problem.
fn consistency_error<T: Scalar>(rng: &mut Rng) -> f64 {
    let h = [16, 24, 32][rng.below(3)];
    let w = [16, 24, 32][rng.below(3)];
    let acc = 2.0 + 4.0 * rng.uniform();
    let target = random_image::<T>(rng, h, w);
    let mask = generate_mask(rng, h, w, &MaskParams::new(acc, 2)).unwrap();
    let meas = apply_encoding(&target, &mask).unwrap();
    let model = CascadeModel::<T>::he_init(rng, DESK, Lambda::Infinite).unwrap();
    let out = model.reconstruct(&zero_filled(&meas), &meas).unwrap();
    let k = fft2(&out);
    let mut err = 0.0f64;
    for r in (0..h).filter(|&r| mask.is_sampled(r)) {
        for c in 0..w {
            let (a, b) = (k.coeff(r, c), meas.kspace.coeff(r, c));
            err = err.max((a.0 - b.0).as_f64().abs()).max((a.1 - b.1).as_f64().abs());
        }
    }
    err
}

fn hard_consistency() -> Verdict {
    let start = Instant::now();
    let mut rng = Rng::new(2024);
    let (mut e64, mut e32) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        e64 = e64.max(consistency_error::<f64>(&mut rng));
        e32 = e32.max(consistency_error::<f32>(&mut rng));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = e64 < 1e-10 && e32 < 1e-4 && secs < 30.0;
    verdict(
        2,
        "hard data consistency",
        pass,
        format!("100 pairs: f64 {e64:.2e} < 1e-10, f32 {e32:.2e} < 1e-4; {secs:.2} s < 30 s"),
    )
}

fn naive_dft(img: &ComplexImage<f64>) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = img.dims();
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let (mut re, mut im) = (vec![0.0; h * w], vec![0.0; h * w]);
    for u in 0..h {
        for v in 0..w {
            let (mut sr, mut si) = (0.0, 0.0);
            for i in 0..h {
                for j in 0..w {
                    let t = -2.0 * PI * ((u * i) as f64 / h as f64 + (v * j) as f64 / w as f64);
                    let (xr, xi) = img.pixel(i, j);
                    sr += xr * t.cos() - xi * t.sin();
                    si += xr * t.sin() + xi * t.cos();
                }
            }
            re[u * w + v] = sr * scale;
            im[u * w + v] = si * scale;
        }
    }
    (re, im)
}

fn dft_unitarity() -> Verdict {
    let start = Instant::now();
    let mut rng = Rng::new(3);
    let mut parseval = 0.0f64;
    for (h, w) in [(4, 4), (8, 8), (16, 32), (64, 64), (6, 10), (12, 12)] {
        for _ in 0..10 {
            let img = random_image::<f64>(&mut rng, h, w);
            let k = fft2(&img);
            let ratio = k.norm_sq() / img.as_tensor().data().iter().map(|v| v * v).sum::<f64>();
            parseval = parseval.max((ratio - 1.0).abs());
            let back = ifft2(&k);
            assert!(back.as_tensor().max_abs_diff(img.as_tensor()).unwrap() < 1e-12);
        }
    }
    let mut oracle = 0.0f64;
    for n in [4, 8] {
        for _ in 0..5 {
            let img = random_image::<f64>(&mut rng, n, n);
            let k = fft2(&img);
            let (re, im) = naive_dft(&img);
            let num: f64 =
                k.re().iter().zip(&re).chain(k.im().iter().zip(&im)).map(|(a, b)| (a - b).powi(2)).sum();
            let den: f64 = re.iter().chain(&im).map(|v| v * v).sum();
            oracle = oracle.max((num / den).sqrt());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = parseval < 1e-12 && oracle < 1e-10 && secs < 5.0;
    verdict(
        3,
        "DFT unitarity and oracle",
        pass,
        format!("|ratio-1| {parseval:.2e} < 1e-12, naive DFT {oracle:.2e} < 1e-10; {secs:.3} s < 5 s"),
    )
}

fn zero_network_identity() -> Verdict {
    let mut rng = Rng::new(4);
    let model = CascadeModel::<f64>::zeros(DESK, Lambda::Infinite).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let target = random_image::<f64>(&mut rng, 32, 32);
        let mask = generate_mask(&mut rng, 32, 32, &MaskParams::new(3.0, 4)).unwrap();
        let meas = apply_encoding(&target, &mask).unwrap();
        let x_u = zero_filled(&meas);
        let out = model.reconstruct(&x_u, &meas).unwrap();
        worst = worst.max(out.as_tensor().max_abs_diff(x_u.as_tensor()).unwrap());
    }
    verdict(4, "zero-network identity", worst < 1e-14, format!("max |out - x_u| {worst:.2e} (roundoff)"))
}

fn cli(args: &[&str], single_worker: bool) -> Result<String, String> {
    let mut cmd = Command::new(BIN);
    cmd.args(args);
    if single_worker {
        cmd.env("CASCADE_RECON_THREADS", "1");
    }
    let out = cmd.output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{} failed: {}", args[0], String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Trains the desk profile; returns the final training loss.
fn desk_train(data: &Path, out: &Path, extra: &[&str], single_worker: bool) -> Result<f64, String> {
    let mut args = vec![
        "train", "--data", p(data), "--nc", "3", "--nd", "3", "--nf", "16", "--acceleration", "3", "--n-low", "8",
        "--epochs", "200", "--batch-size", "2", "--lr", "1e-3", "--seed", "1", "--out", p(out),
    ];
    args.extend_from_slice(extra);
    let stdout = cli(&args, single_worker)?;
    stdout
        .lines()
        .find_map(|l| l.strip_prefix("final training loss "))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| "no final loss in train output".to_string())
}

struct Eval {
    mse: f64,
    zf: f64,
    stdout: String,
}

fn evaluate(ckpt: &Path, data: &Path, split: &str, acc: &str, report: &Path) -> Result<Eval, String> {
    let stdout = cli(
        &["evaluate", "--checkpoint", p(ckpt), "--data", p(data), "--split", split, "--acceleration", acc,
          "--n-low", "8", "--mask-seed", "0", "--out-report", p(report)],
        true,
    )?;
    let csv = fs::read_to_string(report.with_extension("csv")).map_err(|e| e.to_string())?;
    let rows: Vec<(f64, f64)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect();
    let n = rows.len() as f64;
    Ok(Eval {
        mse: rows.iter().map(|r| r.0).sum::<f64>() / n,
        zf: rows.iter().map(|r| r.1).sum::<f64>() / n,
        stdout,
    })
}

fn fail(id: u8, name: &'static str, why: String) -> Verdict {
    verdict(id, name, false, why)
}

fn desk_criteria(dir: &Path) -> Vec<Verdict> {
    const Q: &str = "desk reconstruction quality";
    const M: &str = "acceleration monotonicity";
    const L: &str = "reconstruction latency";
    const D: &str = "determinism";
    let data = dir.join("data");
    if let Err(e) = cli(&["generate", "--n", "10", "--size", "64", "--seed", "1", "--out", p(&data)], false) {
        return vec![fail(5, Q, e.clone()), fail(6, M, e.clone()), fail(7, L, e.clone()), fail(8, D, e)];
    }
    let ckpt = dir.join("desk3.ckpt");
    let start = Instant::now();
    let loss = match desk_train(&data, &ckpt, &[], false) {
        Ok(l) => l,
        Err(e) => return vec![fail(5, Q, e.clone()), fail(6, M, e.clone()), fail(7, L, e.clone()), fail(8, D, e)],
    };
    let train_secs = start.elapsed().as_secs_f64();
    let mut out = Vec::new();

    let train_eval = evaluate(&ckpt, &data, "train", "3", &dir.join("train3.txt"));
    let test_eval = evaluate(&ckpt, &data, "test", "3", &dir.join("test3.txt"));
    out.push(match (&train_eval, &test_eval) {
        (Ok(tr), Ok(te)) => {
            let (a, b) = (tr.mse / tr.zf, te.mse / te.zf);
            verdict(
                5,
                Q,
                a < 0.5 && b < 0.9 && train_secs < 900.0,
                format!(
                    "train {:.3e} / ZF {:.3e} = {a:.3} < 0.5, test {:.3e} / ZF {:.3e} = {b:.3} < 0.9; {train_secs:.0} s",
                    tr.mse, tr.zf, te.mse, te.zf
                ),
            )
        }
        (Err(e), _) | (_, Err(e)) => fail(5, Q, e.clone()),
    });

    let ckpt6 = dir.join("desk6.ckpt");
    let fine = cli(
        &["train", "--data", p(&data), "--nc", "3", "--nd", "3", "--nf", "16", "--acceleration", "6", "--n-low", "8",
          "--epochs", "50", "--batch-size", "2", "--lr", "1e-3", "--seed", "2", "--init-checkpoint", p(&ckpt),
          "--out", p(&ckpt6)],
        false,
    );
    out.push(match (fine, &test_eval) {
        (Ok(_), Ok(te3)) => match evaluate(&ckpt6, &data, "test", "6", &dir.join("test6.txt")) {
            Ok(te6) => verdict(
                6,
                M,
                te6.mse > te3.mse,
                format!("test MSE 6x {:.3e} > 3x {:.3e}", te6.mse, te3.mse),
            ),
            Err(e) => fail(6, M, e),
        },
        (Err(e), _) => fail(6, M, e),
        (_, Err(e)) => fail(6, M, e.clone()),
    });

    let image = data.join("phantom_0008.cxt");
    let recon = cli(
        &["reconstruct", "--checkpoint", p(&ckpt), "--image", p(&image), "--mask-seed", "0", "--out", p(&dir.join("recon"))],
        true,
    );
    out.push(match (recon, &test_eval) {
        (Ok(s), Ok(te)) => {
            let ms: Option<f64> = s
                .lines()
                .find_map(|l| l.strip_prefix("reconstruction time: "))
                .and_then(|v| v.trim_end_matches(" ms").trim().parse().ok());
            let reported = te.stdout.lines().any(|l| l.starts_with("reconstruction time per image:"));
            match ms {
                Some(ms) => verdict(
                    7,
                    L,
                    ms < 1000.0 && reported,
                    format!("single image {ms:.1} ms < 1000 ms; reported in evaluation output: {reported}"),
                ),
                None => fail(7, L, "no timing in reconstruct output".into()),
            }
        }
        (Err(e), _) => fail(7, L, e),
        (_, Err(e)) => fail(7, L, e.clone()),
    });

    out.push(match desk_train(&data, &dir.join("desk3_repeat.ckpt"), &[], true) {
        Ok(again) => {
            let rel = (again - loss).abs() / loss.abs();
            verdict(8, D, rel <= 1e-6, format!("final loss {loss:.9e} vs {again:.9e}, rel {rel:.1e} <= 1e-6"))
        }
        Err(e) => fail(8, D, e),
    });
    out
}

fn main() -> ExitCode {
    // libtest arguments (e.g. --list) are not meaningful here.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let tmp = tempfile::tempdir().expect("temp dir");
    let work: PathBuf = tmp.path().to_path_buf();
    let mut verdicts = vec![gradient_correctness(), hard_consistency(), dft_unitarity(), zero_network_identity()];
    for v in &verdicts {
        println!("{} criterion {}: {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.id, v.name, v.detail);
    }
    for v in desk_criteria(&work) {
        println!("{} criterion {}: {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.id, v.name, v.detail);
        verdicts.push(v);
    }
    let failed = verdicts.iter().filter(|v| !v.pass).count();
    println!("acceptance: {} passed, {failed} failed", verdicts.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
