use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const FRAMES_MAGIC: &[u8; 4] = b"MVFR";
pub const FRAMES_VERSION: u32 = 1;

/// Encodes `[T, 3, H, W]` frames normalized to `[-1, 1]` as 8-bit pixels:
/// magic, version, then `T, C, H, W` as little-endian u32, then the bytes.
pub fn frames_to_bytes(frames: &Tensor) -> Result<Vec<u8>> {
    if frames.ndim() != 4 || frames.shape()[1] != 3 {
        return Err(Error::ShapeMismatch(format!("frames must be [T, 3, H, W], got {:?}", frames.shape())));
    }
    let mut out = Vec::with_capacity(24 + frames.len());
    out.extend_from_slice(FRAMES_MAGIC);
    out.extend_from_slice(&FRAMES_VERSION.to_le_bytes());
    for &d in frames.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend(frames.data().iter().map(|&v| ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8));
    Ok(out)
}

/// Decodes 8-bit frames and applies mean/std 0.5 normalization:
/// `x = (p / 255 - 0.5) / 0.5`.
pub fn frames_from_bytes(bytes: &[u8]) -> Result<Tensor> {
    let bad = |m: &str| Error::Schema(format!("frame file: {m}"));
    if bytes.len() < 24 || &bytes[..4] != FRAMES_MAGIC {
        return Err(bad("bad magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    if word(1) != FRAMES_VERSION {
        return Err(bad(&format!("unsupported version {}", word(1))));
    }
    let shape: Vec<usize> = (2..6).map(|i| word(i) as usize).collect();
    let n: usize = shape.iter().product();
    if shape[1] != 3 || bytes.len() != 24 + n {
        return Err(bad(&format!("shape {shape:?} does not match {} payload bytes", bytes.len() - 24)));
    }
    let data = bytes[24..].iter().map(|&p| (p as f64 / 255.0 - 0.5) / 0.5).collect();
    Tensor::new(shape, data)
}

pub fn write_frames(path: &Path, frames: &Tensor) -> Result<()> {
    std::fs::write(path, frames_to_bytes(frames)?).map_err(|e| Error::io(path, e))
}

pub fn read_frames(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    frames_from_bytes(&bytes)
}
