//! Dataset-on-disk and training-run helpers shared by the CLI and tests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::cascade::{CascadeModel, Hyper};
use crate::checkpoint::save_checkpoint;
use crate::dclayer::Lambda;
use crate::error::{param_err, Error, Result};
use crate::io::{load_tensor, save_tensor, Manifest, ManifestEntry, Split, MANIFEST_FILE};
use crate::phantom::{make_dataset, PhantomSpec};
use crate::rng::Rng;
use crate::tensor::{ComplexImage, Scalar};
use crate::training::{EpochStats, TrainConfig, Trainer};

/// He-initialised model for `seed`. Training with the same seed uses a
/// different stream, so the two never share draws.
pub fn initial_model<T: Scalar>(hyper: Hyper, lambda: Lambda, seed: u64) -> Result<CascadeModel<T>> {
    CascadeModel::he_init(&mut Rng::new(seed).derive(0), hyper, lambda)
}

/// Writes `n` phantoms of `size`×`size` as f32 CXT1 files plus a manifest.
/// The last `n_test` images form the test split.
pub fn generate_dataset(out: &Path, n: usize, size: usize, seed: u64, n_test: usize) -> Result<Manifest> {
    let ds = make_dataset::<f32>(n, &PhantomSpec::new(size, size, 0), seed, n_test)?;
    fs::create_dir_all(out)?;
    let n_train = n - n_test;
    let mut manifest = Manifest::default();
    for (i, img) in ds.images.iter().enumerate() {
        let name = PathBuf::from(format!("phantom_{i:04}.cxt"));
        save_tensor(img.as_tensor(), out.join(&name))?;
        manifest.entries.push(ManifestEntry {
            path: name,
            split: if i < n_train { Split::Train } else { Split::Test },
        });
    }
    manifest.write(out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Accepts either a dataset directory or the manifest file itself.
pub fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join(MANIFEST_FILE)
    } else {
        data.to_path_buf()
    }
}

pub fn load_image<T: Scalar>(path: &Path) -> Result<ComplexImage<T>> {
    let t = load_tensor(path)?.into_precision::<T>();
    ComplexImage::from_tensor(t)
}

/// Images of one split, keyed by file stem.
pub fn load_split<T: Scalar>(data: &Path, split: Split) -> Result<Vec<(String, ComplexImage<T>)>> {
    let mpath = manifest_path(data);
    if !mpath.is_file() {
        return Err(param_err(format!("no manifest at {}", mpath.display())));
    }
    let root = mpath.parent().unwrap_or(Path::new("."));
    let manifest = Manifest::read(&mpath)?;
    manifest
        .paths(split)
        .map(|p| {
            let id = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string());
            Ok((id, load_image(&root.join(p))?))
        })
        .collect()
}

/// Output locations for a training run.
#[derive(Debug, Clone, Default)]
pub struct RunOutputs {
    pub checkpoint: Option<PathBuf>,
    /// Save every N epochs to `<checkpoint>.epoch<N>`.
    pub checkpoint_every: Option<usize>,
    pub log: Option<PathBuf>,
}

fn epoch_checkpoint(base: &Path, epoch: usize) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(format!(".epoch{epoch}"));
    PathBuf::from(s)
}

/// Trains for `cfg.epochs` epochs, calling `on_epoch` after each, and writes
/// the final checkpoint.
pub fn run_training<T: Scalar>(
    model: CascadeModel<T>,
    images: &[ComplexImage<T>],
    cfg: TrainConfig,
    out: &RunOutputs,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(CascadeModel<T>, Vec<EpochStats>)> {
    if images.is_empty() {
        return Err(param_err("training split is empty"));
    }
    if out.checkpoint_every == Some(0) {
        return Err(param_err("checkpoint interval must be positive"));
    }
    let epochs = cfg.epochs;
    let mut trainer = Trainer::new(model, cfg)?;
    if let Some(p) = &out.log {
        let f = fs::OpenOptions::new().create(true).append(true).open(p)?;
        trainer = trainer.with_log(Box::new(f) as Box<dyn Write + Send>);
    }
    let mut history = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let stats = trainer.train_epoch(images)?;
        on_epoch(&stats);
        if let (Some(every), Some(base)) = (out.checkpoint_every, &out.checkpoint) {
            if stats.epoch % every == 0 && stats.epoch != epochs {
                save_checkpoint(&trainer.model, epoch_checkpoint(base, stats.epoch))?;
            }
        }
        history.push(stats);
    }
    let model = trainer.into_model();
    if let Some(p) = &out.checkpoint {
        save_checkpoint(&model, p)?;
    }
    Ok((model, history))
}

/// Exit code the CLI uses for each error kind.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Diverged { .. } => 3,
        _ => 2,
    }
}
