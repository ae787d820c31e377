//! Map-bundle files for externally generated teacher maps.
//!
//! Little-endian layout:
//!
//! ```text
//! magic   4 bytes  "ATTN"
//! version u32      1
//! count   u32
//! height  u32
//! width   u32
//! payload f32 × count·height·width, example-major, row-major within a map
//! crc     u32      CRC-32 (IEEE) of the payload bytes
//! ```
//!
//! On load every map is checked for negative or non-finite entries and
//! renormalized to unit sum in `f64`; a warning is logged when a map's sum
//! was off by more than 1e-3.

use std::fs;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::maps::{from_normalized, TeacherMap, TeacherSource};

pub const BUNDLE_MAGIC: &[u8; 4] = b"ATTN";
pub const BUNDLE_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

pub fn encode_bundle(maps: &[TeacherMap]) -> Result<Vec<u8>> {
    let (h, w) = maps.first().map(|m| m.side()).unwrap_or((28, 28));
    let mut out = Vec::with_capacity(HEADER_LEN + maps.len() * h * w * 4 + 4);
    out.extend_from_slice(BUNDLE_MAGIC);
    for v in [BUNDLE_VERSION, maps.len() as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (i, m) in maps.iter().enumerate() {
        if m.side() != (h, w) {
            return Err(Error::Load {
                index: i,
                message: format!("map is {:?}, bundle is {h}x{w}", m.side()),
            });
        }
        for &v in m.grid().data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out[HEADER_LEN..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn header_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Decodes a bundle; `expected_count` is the size of the split it will be
/// attached to.
pub fn decode_bundle(bytes: &[u8], expected_count: Option<usize>) -> Result<Vec<TeacherMap>> {
    let header_err = |message: &str| Error::Load {
        index: 0,
        message: message.to_string(),
    };
    if bytes.len() < HEADER_LEN + 4 {
        return Err(header_err("file too short for header"));
    }
    if &bytes[..4] != BUNDLE_MAGIC {
        return Err(header_err("bad magic"));
    }
    let version = header_u32(bytes, 4);
    if version != BUNDLE_VERSION {
        return Err(header_err(&format!("unsupported version {version}")));
    }
    let count = header_u32(bytes, 8) as usize;
    let (h, w) = (header_u32(bytes, 12) as usize, header_u32(bytes, 16) as usize);
    if h == 0 || w == 0 {
        return Err(header_err("zero map dimension"));
    }
    if let Some(n) = expected_count {
        if n != count {
            return Err(Error::Load {
                index: count.min(n),
                message: format!("count mismatch: bundle holds {count} maps, split has {n} examples"),
            });
        }
    }
    let payload_len = count * h * w * 4;
    if bytes.len() != HEADER_LEN + payload_len + 4 {
        return Err(header_err(&format!(
            "expected {} bytes for {count} maps of {h}x{w}, got {}",
            HEADER_LEN + payload_len + 4,
            bytes.len()
        )));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + payload_len];
    let stored = header_u32(bytes, HEADER_LEN + payload_len);
    if crc32fast::hash(payload) != stored {
        return Err(header_err("CRC mismatch"));
    }

    let mut maps = Vec::with_capacity(count);
    for (index, chunk) in payload.chunks_exact(h * w * 4).enumerate() {
        let values: Vec<f64> = chunk
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
            .collect();
        if let Some((cell, v)) = values.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Load {
                index,
                message: format!("invalid value {v} at cell {cell}"),
            });
        }
        let total: f64 = values.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Load {
                index,
                message: "map has zero total mass".into(),
            });
        }
        if (total - 1.0).abs() > 1e-3 {
            warn!("teacher map {index} sums to {total}; renormalizing");
        }
        let grid = Tensor::new(vec![h, w], values.iter().map(|v| v / total).collect())?;
        if grid.data().contains(&0.0) {
            return Err(Error::Load {
                index,
                message: "map has zero entries; teacher maps must be strictly positive (apply an ε floor)".into(),
            });
        }
        maps.push(from_normalized(grid, TeacherSource::External));
    }
    Ok(maps)
}

pub fn save_external_maps(maps: &[TeacherMap], path: &Path) -> Result<()> {
    fs::write(path, encode_bundle(maps)?).map_err(|e| Error::io(path, e))
}

pub fn load_external_maps(path: &Path, expected_count: Option<usize>) -> Result<Vec<TeacherMap>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bundle(&bytes, expected_count)
}
