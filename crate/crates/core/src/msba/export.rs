//! Intensity-map files: scaled 16-bit PNG previews and raw float dumps.
//!
//! Raw layout: `b"FIMP"`, then `H`, `W`, `C` as little-endian `u32`, then
//! `H·W·C` little-endian `f32` values in row-major, channel-interleaved order.

use std::io::{Read, Write};
use std::path::Path;

use image::{ImageBuffer, Luma};

use super::IntensityMap;
use crate::dataset::Image;
use crate::error::{Error, Result};
use crate::tensor::Mat;

/// Default brightness gain for PNG previews.
pub const PNG_SCALE: f64 = 5.0;
const MAGIC: &[u8; 4] = b"FIMP";

/// Writes `clamp(v · scale, 0, 1)` of a single-channel map as 16-bit grey.
pub fn write_map_png16(map: &Mat, scale: f64, path: &Path) -> Result<()> {
    let px: Vec<u16> = map
        .data
        .iter()
        .map(|v| ((v * scale).clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(map.cols as u32, map.rows as u32, px).expect("buffer size matches");
    buf.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_raw_map(map: &IntensityMap, path: &Path) -> Result<()> {
    let (h, w, c) = map.shape();
    let mut bytes = Vec::with_capacity(16 + 4 * h * w * c);
    bytes.extend_from_slice(MAGIC);
    for d in [h, w, c] {
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &map.values.data {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_raw_map(path: &Path) -> Result<IntensityMap> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Image {
        path: path.to_path_buf(),
        message: msg.to_string(),
    };
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("not a raw intensity map"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (h, w, c) = (dim(0), dim(1), dim(2));
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| bad("header dimensions overflow"))?;
    if bytes.len() != 16 + 4 * n {
        return Err(bad("payload length does not match header"));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok(IntensityMap {
        values: Image::from_vec(h, w, c, data)?,
    })
}
