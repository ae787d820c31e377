use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use flate2::bufread::GzDecoder;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Decoded MNIST: `images` is `[N, 28, 28]` with pixels `byte / 255`.
#[derive(Clone, Debug)]
pub struct MnistRaw {
    pub images: Tensor,
    pub labels: Vec<u8>,
}

impl MnistRaw {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Digit `i` as a `[28, 28]` tensor.
    pub fn digit(&self, i: usize) -> Tensor {
        self.images.slice_outer(i)
    }

    /// First `n` examples (or all of them).
    pub fn truncated(&self, n: Option<usize>) -> MnistRaw {
        match n {
            Some(n) if n < self.len() => MnistRaw {
                images: Tensor::new(vec![n, 28, 28], self.images.data()[..n * 784].to_vec())
                    .expect("prefix of a valid tensor"),
                labels: self.labels[..n].to_vec(),
            },
            _ => self.clone(),
        }
    }
}

fn be_u32(bytes: &[u8], offset: usize, field: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::parse(field, "truncated header"))
}

/// Parses an images file and a labels file in the big-endian IDX layout.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<MnistRaw> {
    let magic = be_u32(images, 0, "images.magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::parse("images.magic", format!("wrong magic 0x{magic:08x}")));
    }
    let n = be_u32(images, 4, "images.count")? as usize;
    let rows = be_u32(images, 8, "images.rows")?;
    let cols = be_u32(images, 12, "images.cols")?;
    if rows != 28 || cols != 28 {
        return Err(Error::parse("images.dims", format!("expected 28x28, got {rows}x{cols}")));
    }
    let payload = &images[16..];
    if payload.len() != n * 784 {
        return Err(Error::parse(
            "images.payload",
            format!("expected {} bytes, got {}", n * 784, payload.len()),
        ));
    }

    let lmagic = be_u32(labels, 0, "labels.magic")?;
    if lmagic != LABELS_MAGIC {
        return Err(Error::parse("labels.magic", format!("wrong magic 0x{lmagic:08x}")));
    }
    let ln = be_u32(labels, 4, "labels.count")? as usize;
    if ln != n {
        return Err(Error::parse("labels.count", format!("{ln} labels for {n} images")));
    }
    let lpayload = &labels[8..];
    if lpayload.len() != n {
        return Err(Error::parse(
            "labels.payload",
            format!("expected {n} bytes, got {}", lpayload.len()),
        ));
    }
    if let Some(bad) = lpayload.iter().find(|&&l| l > 9) {
        return Err(Error::parse("labels.payload", format!("label {bad} out of range")));
    }
    if n == 0 {
        return Err(Error::parse("images.count", "file holds no images"));
    }
    let pixels = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(MnistRaw {
        images: Tensor::new(vec![n, 28, 28], pixels)?,
        labels: lpayload.to_vec(),
    })
}

/// Reads a file, transparently gunzipping `*.gz`.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(GzDecoder::new(BufReader::new(file)))
    } else {
        Box::new(BufReader::new(file))
    };
    let mut buf = Vec::new();
    reader.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<MnistRaw> {
    parse_idx(&read_maybe_gz(images)?, &read_maybe_gz(labels)?)
}

/// Encodes images and labels back into IDX bytes; pixels are quantized
/// with `round(v * 255)`.
pub fn encode_idx(raw: &MnistRaw) -> (Vec<u8>, Vec<u8>) {
    let n = raw.len() as u32;
    let mut images = Vec::with_capacity(16 + raw.images.len());
    for v in [IMAGES_MAGIC, n, 28, 28] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    images.extend(raw.images.data().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    let mut labels = Vec::with_capacity(8 + raw.len());
    labels.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&n.to_be_bytes());
    labels.extend_from_slice(&raw.labels);
    (images, labels)
}
