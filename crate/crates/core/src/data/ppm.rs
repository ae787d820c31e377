//! Binary netpbm (P6 color, P5 gray) encoding for previews and heatmaps.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::synth::DatasetSplit;

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn header(kind: &str, width: usize, height: usize) -> Vec<u8> {
    format!("{kind}\n{width} {height}\n255\n").into_bytes()
}

/// P6 bytes for a planar `[3, H, W]` image in `[0, 1]`.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match *image.shape() {
        [3, h, w] => (h, w),
        ref s => return Err(Error::dim(format!("PPM export expects [3, H, W], got {s:?}"))),
    };
    let plane = h * w;
    let mut out = header("P6", w, h);
    out.reserve(3 * plane);
    let d = image.data();
    for p in 0..plane {
        for c in 0..3 {
            out.push(quantize(d[c * plane + p]));
        }
    }
    Ok(out)
}

pub fn encode_pgm(width: usize, height: usize, gray: &[u8]) -> Vec<u8> {
    assert_eq!(gray.len(), width * height);
    let mut out = header("P5", width, height);
    out.extend_from_slice(gray);
    out
}

/// Parses a P5 or P6 file with maxval 255: `(magic, width, height, payload)`.
pub fn decode_netpbm(bytes: &[u8]) -> Result<(String, usize, usize, Vec<u8>)> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse("netpbm.header", "truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1; // single whitespace byte before the raster
    let magic = fields[0].clone();
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::parse("netpbm.magic", format!("unsupported magic {other}"))),
    };
    let num = |i: usize, name: &str| -> Result<usize> {
        fields[i].parse().map_err(|_| Error::parse(name, format!("bad value '{}'", fields[i])))
    };
    let (w, h, maxval) = (num(1, "netpbm.width")?, num(2, "netpbm.height")?, num(3, "netpbm.maxval")?);
    if maxval != 255 {
        return Err(Error::parse("netpbm.maxval", format!("expected 255, got {maxval}")));
    }
    let payload = bytes.get(pos..).unwrap_or(&[]);
    if payload.len() != w * h * channels {
        return Err(Error::parse(
            "netpbm.payload",
            format!("expected {} bytes, got {}", w * h * channels, payload.len()),
        ));
    }
    Ok((magic, w, h, payload.to_vec()))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `<split>_<index>_y<label>.ppm` for the first `count` examples of
/// each split.
pub fn export_examples_ppm(split: &DatasetSplit, dir: &Path, count: usize) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (name, examples) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        for (i, ex) in examples.iter().take(count).enumerate() {
            let path = dir.join(format!("{name}_{i:04}_y{}.ppm", ex.label));
            write_file(&path, &encode_ppm(&ex.image)?)?;
            written.push(path);
        }
    }
    Ok(written)
}
