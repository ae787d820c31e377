//! Model checkpoint files.
//!
//! Little-endian layout:
//!
//! ```text
//! magic    8 bytes   "AALNCKPT"
//! version  u32       1
//! count    u32       number of tensors
//! per tensor:
//!   name_len u32, name (UTF-8), rank u32, dims u32 × rank,
//!   data f64 × product(dims)
//! ```
//!
//! Tensors are written in [`ModelParams::TENSOR_NAMES`] order; loading
//! checks names and shapes against a freshly built model.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::model::ModelParams;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AALNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + params.num_parameters() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(ModelParams::TENSOR_NAMES.len() as u32).to_le_bytes());
    for (name, t) in ModelParams::TENSOR_NAMES.iter().zip(params.tensors()) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::parse(field, "truncated checkpoint"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::parse("magic", "wrong magic"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::parse("version", format!("unsupported version {version}")));
    }
    let count = r.u32("count")? as usize;
    if count != ModelParams::TENSOR_NAMES.len() {
        return Err(Error::parse("count", format!("expected 8 tensors, found {count}")));
    }
    let mut params = ModelParams::zeros();
    for (name, slot) in ModelParams::TENSOR_NAMES.iter().zip(params.tensors_mut()) {
        let len = r.u32("name_len")? as usize;
        let got = r.take(len, "name")?;
        if got != name.as_bytes() {
            return Err(Error::parse(
                "name",
                format!("expected {name}, found {}", String::from_utf8_lossy(got)),
            ));
        }
        let rank = r.u32(name)? as usize;
        let dims = (0..rank)
            .map(|_| r.u32(name).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if dims != slot.shape() {
            return Err(Error::parse(
                *name,
                format!("shape {dims:?}, expected {:?}", slot.shape()),
            ));
        }
        let raw = r.take(slot.len() * 8, name)?;
        for (v, chunk) in slot.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::parse("trailer", "unexpected bytes after last tensor"));
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
