//! Model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CSC1"  u8 version=1  u8 precision code
//! u32 n_c  u32 n_d  u32 n_f  u32 kernel
//! u8 lambda mode (0 = infinite, 1 = finite)  f64 lambda (0 when infinite)
//! u32 tensor count
//! repeated: u16 name length, UTF-8 name, CXT1 tensor
//! ```
//!
//! Tensors appear in parameter order, named `stage{s}.conv{i}.weight|bias`.

use std::fs;
use std::path::Path;

use crate::cascade::{CascadeModel, Hyper};
use crate::dclayer::Lambda;
use crate::error::{Error, Result};
use crate::io::{decode_tensor, encode_tensor, AnyTensor};
use crate::tensor::{Precision, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CSC1";
const VERSION: u8 = 1;

fn ckpt_err(msg: impl Into<String>) -> Error {
    Error::CheckpointFormat(msg.into())
}

/// Decoded checkpoint contents, before conversion to a model.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub precision: Precision,
    pub hyper: Hyper,
    pub lambda: Lambda,
    pub tensors: Vec<(String, AnyTensor)>,
}

pub fn encode_checkpoint<T: Scalar>(model: &CascadeModel<T>) -> Result<Vec<u8>> {
    let hyper = model.hyper();
    let mut out = CHECKPOINT_MAGIC.to_vec();
    out.push(VERSION);
    out.push(T::PRECISION.code());
    for v in [hyper.n_c, hyper.n_d, hyper.n_f, hyper.kernel] {
        let v = u32::try_from(v).map_err(|_| ckpt_err(format!("hyperparameter {v} exceeds u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    let (mode, value) = match model.lambda() {
        Lambda::Infinite => (0u8, 0.0f64),
        Lambda::Finite(l) => (1u8, l),
    };
    out.push(mode);
    out.extend_from_slice(&value.to_le_bytes());
    let params = model.params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in model.param_names().iter().zip(params) {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        encode_tensor(t, &mut out)?;
    }
    Ok(out)
}

pub fn save_checkpoint<T: Scalar>(model: &CascadeModel<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

fn take<'a>(cursor: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if cursor.len() < n {
        return Err(ckpt_err(format!("truncated {what}")));
    }
    let (head, rest) = cursor.split_at(n);
    *cursor = rest;
    Ok(head)
}

fn take_u32(cursor: &mut &[u8], what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(take(cursor, 4, what)?.try_into().unwrap()))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut cur = bytes;
    if take(&mut cur, 4, "magic")? != CHECKPOINT_MAGIC {
        return Err(ckpt_err("bad magic, expected CSC1"));
    }
    let head = take(&mut cur, 2, "header")?;
    if head[0] != VERSION {
        return Err(ckpt_err(format!("unsupported version {}", head[0])));
    }
    let precision =
        Precision::from_code(head[1]).ok_or_else(|| ckpt_err(format!("unknown precision {}", head[1])))?;
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = take_u32(&mut cur, "hyperparameters")? as usize;
    }
    let hyper = Hyper {
        n_c: dims[0],
        n_d: dims[1],
        n_f: dims[2],
        kernel: dims[3],
    };
    hyper.validate().map_err(|e| ckpt_err(e.to_string()))?;
    let mode = take(&mut cur, 1, "lambda mode")?[0];
    let value = f64::from_le_bytes(take(&mut cur, 8, "lambda")?.try_into().unwrap());
    let lambda = match mode {
        0 => Lambda::Infinite,
        1 => Lambda::Finite(value).validate().map_err(|e| ckpt_err(e.to_string()))?,
        m => return Err(ckpt_err(format!("unknown lambda mode {m}"))),
    };
    let count = take_u32(&mut cur, "tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = u16::from_le_bytes(take(&mut cur, 2, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&mut cur, len, "name")?)
            .map_err(|_| ckpt_err("tensor name is not UTF-8"))?
            .to_string();
        let t = decode_tensor(&mut cur).map_err(|e| match e {
            Error::TensorFormat(m) => ckpt_err(format!("tensor {name}: {m}")),
            other => other,
        })?;
        if t.precision() != precision {
            return Err(ckpt_err(format!("tensor {name} precision differs from header")));
        }
        tensors.push((name, t));
    }
    if !cur.is_empty() {
        return Err(ckpt_err(format!("{} trailing bytes", cur.len())));
    }
    Ok(Checkpoint {
        precision,
        hyper,
        lambda,
        tensors,
    })
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}

impl Checkpoint {
    /// Builds a model in precision `T`; exact when `T` matches the stored
    /// precision.
    pub fn into_model<T: Scalar>(self) -> Result<CascadeModel<T>> {
        let template = CascadeModel::<T>::zeros(self.hyper, self.lambda)?;
        let names = template.param_names();
        if names.len() != self.tensors.len() {
            return Err(ckpt_err(format!(
                "expected {} tensors for {}, found {}",
                names.len(),
                self.hyper,
                self.tensors.len()
            )));
        }
        let mut params: Vec<Tensor<T>> = Vec::with_capacity(names.len());
        for ((expected, slot), (name, t)) in names.iter().zip(template.params()).zip(self.tensors) {
            if *expected != name {
                return Err(ckpt_err(format!("expected tensor {expected}, found {name}")));
            }
            if t.shape() != slot.shape() {
                return Err(ckpt_err(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            params.push(t.into_precision());
        }
        CascadeModel::from_params(self.hyper, self.lambda, params).map_err(|e| ckpt_err(e.to_string()))
    }
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<CascadeModel<T>> {
    read_checkpoint(path)?.into_model()
}

/// Loads a checkpoint and requires its architecture to equal `expected`.
pub fn load_checkpoint_matching<T: Scalar>(path: impl AsRef<Path>, expected: Hyper) -> Result<CascadeModel<T>> {
    let ckpt = read_checkpoint(path)?;
    if ckpt.hyper != expected {
        return Err(ckpt_err(format!(
            "checkpoint architecture {} does not match requested {expected}",
            ckpt.hyper
        )));
    }
    ckpt.into_model()
}
