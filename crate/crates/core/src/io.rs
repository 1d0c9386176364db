//! On-disk formats: `CXT1` tensors, dataset manifests and 8-bit PGM images.
//!
//! `CXT1` layout: magic `CXT1`, u8 precision code (4 = f32, 8 = f64), u8
//! rank, rank × u32 little-endian dims, then row-major little-endian scalars.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{Precision, Scalar, Tensor};

pub const TENSOR_MAGIC: &[u8; 4] = b"CXT1";

/// A tensor read from disk in whatever precision it was stored.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn precision(&self) -> Precision {
        match self {
            AnyTensor::F32(_) => Precision::F32,
            AnyTensor::F64(_) => Precision::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    /// Converts to the requested precision (exact when it already matches).
    pub fn into_precision<T: Scalar>(self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::TensorFormat(msg.into())
}

pub fn encode_tensor<T: Scalar>(t: &Tensor<T>, out: &mut Vec<u8>) -> Result<()> {
    let rank = u8::try_from(t.shape().len())
        .map_err(|_| format_err(format!("rank {} exceeds 255", t.shape().len())))?;
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(T::PRECISION.code());
    out.push(rank);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| format_err(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.reserve(t.len() * T::PRECISION.byte_width());
    for &x in t.data() {
        x.write_le(out);
    }
    Ok(())
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => format_err(format!("truncated {what}")),
        _ => Error::Io(e),
    })
}

fn decode_payload<T: Scalar>(r: &mut impl Read, shape: &[usize]) -> Result<Tensor<T>> {
    let n: usize = shape.iter().product();
    let width = T::PRECISION.byte_width();
    let mut bytes = vec![0u8; n * width];
    read_exact_or(r, &mut bytes, "tensor payload")?;
    let data = bytes.chunks_exact(width).map(T::read_le).collect();
    Tensor::from_vec(shape, data).map_err(|e| format_err(e.to_string()))
}

/// Reads one `CXT1` tensor from a stream.
pub fn decode_tensor(r: &mut impl Read) -> Result<AnyTensor> {
    let mut head = [0u8; 6];
    read_exact_or(r, &mut head, "tensor header")?;
    if &head[..4] != TENSOR_MAGIC {
        return Err(format_err("bad magic, expected CXT1"));
    }
    let precision = Precision::from_code(head[4])
        .ok_or_else(|| format_err(format!("unknown precision code {}", head[4])))?;
    let rank = head[5] as usize;
    if rank == 0 {
        return Err(format_err("rank 0 tensor"));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut d = [0u8; 4];
        read_exact_or(r, &mut d, "tensor dims")?;
        shape.push(u32::from_le_bytes(d) as usize);
    }
    if shape.contains(&0) {
        return Err(format_err(format!("zero dimension in {shape:?}")));
    }
    Ok(match precision {
        Precision::F32 => AnyTensor::F32(decode_payload(r, &shape)?),
        Precision::F64 => AnyTensor::F64(decode_payload(r, &shape)?),
    })
}

pub fn save_tensor<T: Scalar>(t: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = Vec::new();
    encode_tensor(t, &mut bytes)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let bytes = fs::read(path)?;
    let mut cursor = bytes.as_slice();
    let t = decode_tensor(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(format_err(format!("{} trailing bytes", cursor.len())));
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Path relative to the manifest's directory.
    pub path: PathBuf,
    pub split: Split,
}

/// Plain-text dataset index: one `<relative path>\t<train|test>` per line.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.txt";

impl Manifest {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        for e in &self.entries {
            writeln!(f, "{}\t{}", e.path.display(), e.split.as_str())?;
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let f = BufReader::new(fs::File::open(path)?);
        let mut entries = Vec::new();
        for (n, line) in f.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (p, s) = line
                .rsplit_once('\t')
                .ok_or_else(|| format_err(format!("manifest line {}: missing tab", n + 1)))?;
            let split = Split::parse(s.trim())
                .ok_or_else(|| format_err(format!("manifest line {}: bad split {s:?}", n + 1)))?;
            entries.push(ManifestEntry {
                path: PathBuf::from(p),
                split,
            });
        }
        Ok(Self { entries })
    }

    pub fn paths(&self, split: Split) -> impl Iterator<Item = &Path> {
        self.entries
            .iter()
            .filter(move |e| e.split == split)
            .map(|e| e.path.as_path())
    }
}

/// Maps a value in [0, 1] (clipped) to an 8-bit gray level.
pub fn quantize_unit(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0).round() as u8
}

/// Binary (P5) 8-bit PGM.
pub fn write_pgm(path: impl AsRef<Path>, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(crate::error::shape_err(format!(
            "{} pixels for a {width}x{height} image",
            pixels.len()
        )));
    }
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    fs::write(path, bytes)?;
    Ok(())
}
