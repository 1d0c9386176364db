use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cascade_recon::checkpoint::{load_checkpoint_matching, read_checkpoint};
use cascade_recon::eval::{evaluate, write_maps};
use cascade_recon::gradcheck::{format_table, run_gradcheck, Component, GradcheckConfig};
use cascade_recon::io::{load_tensor, save_tensor, Split};
use cascade_recon::pipeline::{exit_code, generate_dataset, initial_model, load_image, load_split, run_training, RunOutputs};
use cascade_recon::rng::Rng;
use cascade_recon::{
    apply_encoding, generate_mask, zero_filled, CascadeModel, Error, Hyper, Lambda, MaskParams, Precision, Result,
    SamplingMask, Scalar, TrainConfig,
};

#[derive(Parser)]
#[command(name = "cascade-recon", version, about = "Deep cascade CNN reconstruction of undersampled MR images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic phantom dataset and its manifest.
    Generate(GenerateArgs),
    /// Train a cascade on the training split.
    Train(TrainArgs),
    /// Reconstruct one image under a seeded or stored mask.
    Reconstruct(ReconstructArgs),
    /// Evaluate a checkpoint on a split with fixed per-image masks.
    Evaluate(EvaluateArgs),
    /// Finite-difference checks of every backward pass.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Images held out as the test split (default: n / 5).
    #[arg(long)]
    n_test: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 3.0)]
    acceleration: f64,
    #[arg(long, default_value_t = 8)]
    n_low: usize,
    #[arg(long, default_value_t = 5)]
    nc: usize,
    #[arg(long, default_value_t = 5)]
    nd: usize,
    #[arg(long, default_value_t = 64)]
    nf: usize,
    #[arg(long, default_value_t = 3)]
    kernel: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Final checkpoint path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    init_checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 1e-7)]
    weight_decay: f64,
    #[arg(long)]
    no_augment: bool,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Training log (default: <out>.log).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PrecisionArg::F32)]
    precision: PrecisionArg,
    /// DC weight: `inf` for hard consistency or a positive number.
    #[arg(long, default_value = "inf")]
    lambda: String,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long, conflicts_with = "mask_file", required_unless_present = "mask_file")]
    mask_seed: Option<u64>,
    #[arg(long)]
    mask_file: Option<PathBuf>,
    #[arg(long, default_value_t = 3.0)]
    acceleration: f64,
    #[arg(long, default_value_t = 8)]
    n_low: usize,
    /// Output directory for x_u.cxt, x_cnn.cxt, mask.cxt and timing.txt.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 3.0)]
    acceleration: f64,
    #[arg(long, default_value_t = 8)]
    n_low: usize,
    #[arg(long, default_value_t = 0)]
    mask_seed: u64,
    /// Table path; the CSV goes next to it with a .csv extension.
    #[arg(long)]
    out_report: Option<PathBuf>,
    /// Directory for magnitude and x5 error-map PGM images.
    #[arg(long)]
    emit_error_maps: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    size: usize,
    #[arg(long, default_value_t = 2)]
    nc: usize,
    #[arg(long, default_value_t = 3)]
    nd: usize,
    #[arg(long, default_value_t = 4)]
    nf: usize,
    /// Test hook: corrupt one component's gradient.
    #[arg(long, hide = true)]
    corrupt: Option<String>,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

fn parse_lambda(s: &str) -> Result<Lambda> {
    if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinite") {
        return Ok(Lambda::Infinite);
    }
    let v: f64 = s.parse().map_err(|_| usage(format!("bad lambda {s:?}")))?;
    Lambda::Finite(v).validate()
}

fn cmd_generate(a: GenerateArgs) -> Result<ExitCode> {
    if a.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let n_test = a.n_test.unwrap_or(a.n / 5);
    let m = generate_dataset(&a.out, a.n, a.size, a.seed, n_test)?;
    println!(
        "wrote {} images ({} train, {} test) to {}",
        m.entries.len(),
        a.n - n_test,
        n_test,
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn train_in<T: Scalar>(a: &TrainArgs, hyper: Hyper, lambda: Lambda, cfg: TrainConfig) -> Result<()> {
    let images: Vec<_> = load_split::<T>(&a.data, Split::Train)?.into_iter().map(|(_, x)| x).collect();
    let mut model: CascadeModel<T> = match &a.init_checkpoint {
        Some(p) => load_checkpoint_matching(p, hyper)?,
        None => initial_model(hyper, lambda, a.seed)?,
    };
    model.set_lambda(lambda)?;
    let log = a.log.clone().unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".log");
        PathBuf::from(s)
    });
    let outputs = RunOutputs {
        checkpoint: Some(a.out.clone()),
        checkpoint_every: a.checkpoint_every,
        log: Some(log),
    };
    let start = Instant::now();
    let (_, history) = run_training(model, &images, cfg, &outputs, |s| {
        println!("epoch {:>4}  loss {:.6e}  masks {}", s.epoch, s.mean_loss, s.distinct_masks);
    })?;
    if let Some(last) = history.last() {
        println!("final training loss {:.9e}", last.mean_loss);
    }
    println!(
        "trained {hyper} for {} epochs in {:.1} s; checkpoint {}",
        history.len(),
        start.elapsed().as_secs_f64(),
        a.out.display()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<ExitCode> {
    let hyper = Hyper {
        n_c: a.nc,
        n_d: a.nd,
        n_f: a.nf,
        kernel: a.kernel,
    };
    hyper.validate()?;
    let lambda = parse_lambda(&a.lambda)?;
    let cfg = TrainConfig {
        alpha: a.lr,
        weight_decay: a.weight_decay,
        batch_size: a.batch_size,
        epochs: a.epochs,
        acceleration: a.acceleration,
        n_low: a.n_low,
        augment: !a.no_augment,
        seed: a.seed,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    match a.precision {
        PrecisionArg::F32 => train_in::<f32>(&a, hyper, lambda, cfg)?,
        PrecisionArg::F64 => train_in::<f64>(&a, hyper, lambda, cfg)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn reconstruct_in<T: Scalar>(a: &ReconstructArgs) -> Result<()> {
    let model = read_checkpoint(&a.checkpoint)?.into_model::<T>()?;
    let target = load_image::<T>(&a.image)?;
    let (h, w) = target.dims();
    let mask = match (&a.mask_file, a.mask_seed) {
        (Some(p), _) => SamplingMask::from_tensor(&load_tensor(p)?, w)?,
        (None, Some(seed)) => generate_mask(&mut Rng::new(seed), h, w, &MaskParams::new(a.acceleration, a.n_low))?,
        (None, None) => return Err(usage("need --mask-seed or --mask-file")),
    };
    if mask.dims() != (h, w) {
        return Err(Error::InvalidShape(format!(
            "mask has {} lines, image has {h} rows",
            mask.height()
        )));
    }
    let meas = apply_encoding(&target, &mask)?;
    let start = Instant::now();
    let x_u = zero_filled(&meas);
    let x_cnn = model.reconstruct(&x_u, &meas)?;
    let ms = start.elapsed().as_secs_f64() * 1e3;

    fs::create_dir_all(&a.out)?;
    save_tensor(x_u.as_tensor(), a.out.join("x_u.cxt"))?;
    save_tensor(x_cnn.as_tensor(), a.out.join("x_cnn.cxt"))?;
    save_tensor(&mask.to_tensor::<T>(), a.out.join("mask.cxt"))?;
    fs::write(a.out.join("timing.txt"), format!("{ms:.3}\n"))?;
    println!("reconstruction time: {ms:.3} ms");
    Ok(())
}

fn cmd_reconstruct(a: ReconstructArgs) -> Result<ExitCode> {
    match read_checkpoint(&a.checkpoint)?.precision {
        Precision::F32 => reconstruct_in::<f32>(&a)?,
        Precision::F64 => reconstruct_in::<f64>(&a)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn report_paths(p: &Path) -> (PathBuf, PathBuf) {
    if p.extension().is_some_and(|e| e == "csv") {
        (p.with_extension("txt"), p.to_path_buf())
    } else {
        (p.to_path_buf(), p.with_extension("csv"))
    }
}

fn evaluate_in<T: Scalar>(a: &EvaluateArgs, split: Split) -> Result<()> {
    let model = read_checkpoint(&a.checkpoint)?.into_model::<T>()?;
    let images = load_split::<T>(&a.data, split)?;
    if images.is_empty() {
        return Err(usage(format!("{} split is empty", split.as_str())));
    }
    let model_id = a
        .checkpoint
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let model_id = format!("{model_id} ({})", model.hyper());
    let params = MaskParams::new(a.acceleration, a.n_low);
    let (report, recons) = evaluate(&model, &model_id, &images, &params, a.mask_seed)?;
    let table = report.to_table();
    print!("{table}");
    if let Some(p) = &a.out_report {
        let (txt, csv) = report_paths(p);
        fs::write(txt, &table)?;
        fs::write(csv, report.to_csv())?;
    }
    if let Some(dir) = &a.emit_error_maps {
        fs::create_dir_all(dir)?;
        for ((id, _), r) in images.iter().zip(&recons) {
            write_maps(dir, id, r)?;
        }
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<ExitCode> {
    let split = Split::parse(&a.split).ok_or_else(|| usage(format!("unknown split {:?}", a.split)))?;
    match read_checkpoint(&a.checkpoint)?.precision {
        Precision::F32 => evaluate_in::<f32>(&a, split)?,
        Precision::F64 => evaluate_in::<f64>(&a, split)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let corrupt = match &a.corrupt {
        Some(s) => Some(Component::parse(s).ok_or_else(|| usage(format!("unknown component {s:?}")))?),
        None => None,
    };
    let cfg = GradcheckConfig {
        seed: a.seed,
        size: a.size,
        hyper: Hyper {
            n_c: a.nc,
            n_d: a.nd,
            n_f: a.nf,
            kernel: 3,
        },
        corrupt,
        ..GradcheckConfig::default()
    };
    let start = Instant::now();
    let rows = run_gradcheck(&cfg)?;
    print!("{}", format_table(&rows));
    println!("elapsed: {:.2} s", start.elapsed().as_secs_f64());
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed()).map(|r| r.component.name()).collect();
    if failed.is_empty() {
        println!("gradcheck passed");
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("gradcheck FAILED: {}", failed.join(", "));
        Ok(ExitCode::from(1))
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("CASCADE_RECON_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| usage(format!("CASCADE_RECON_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
