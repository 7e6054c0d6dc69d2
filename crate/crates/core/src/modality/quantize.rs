//! 8-bit per-channel storage of real-valued fields.
//!
//! Each channel is mapped linearly from its own `[lo, hi]` onto `0..=255`
//! with round-half-up; `lo` and `hi` travel in a JSON sidecar next to the
//! channel images.

use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedChannel {
    pub bytes: Array2<u8>,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedField {
    pub channels: Vec<QuantizedChannel>,
}

pub fn quantize_channel(values: ArrayView2<f64>) -> QuantizedChannel {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
    let range = hi - lo;
    let bytes = values.mapv(|v| {
        if range > 0.0 {
            ((v - lo) / range * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    });
    QuantizedChannel { bytes, lo, hi }
}

pub fn dequantize_channel(q: &QuantizedChannel) -> Array2<f64> {
    let range = q.hi - q.lo;
    q.bytes.mapv(|b| q.lo + b as f64 / 255.0 * range)
}

pub fn quantize(field: &Array3<f64>) -> QuantizedField {
    QuantizedField { channels: field.axis_iter(Axis(2)).map(quantize_channel).collect() }
}

pub fn dequantize(q: &QuantizedField) -> Result<Array3<f64>> {
    let first = q.channels.first().ok_or_else(|| Error::Shape("quantized field has no channels".into()))?;
    let (h, w) = first.bytes.dim();
    let mut out = Array3::zeros((h, w, q.channels.len()));
    for (c, ch) in q.channels.iter().enumerate() {
        if ch.bytes.dim() != (h, w) {
            return Err(Error::Shape("quantized channels differ in size".into()));
        }
        out.index_axis_mut(Axis(2), c).assign(&dequantize_channel(ch));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    version: u32,
    height: usize,
    width: usize,
    /// `[lo, hi]` per channel.
    ranges: Vec<[f64; 2]>,
}

fn channel_file(c: usize) -> String {
    format!("c{c:02}.png")
}

/// Writes one PNG per channel plus `meta.json` into `dir`.
pub fn save_quantized(dir: &Path, q: &QuantizedField) -> Result<()> {
    let first = q.channels.first().ok_or_else(|| Error::Shape("quantized field has no channels".into()))?;
    let (height, width) = first.bytes.dim();
    for (c, ch) in q.channels.iter().enumerate() {
        io_util::save_gray(&dir.join(channel_file(c)), &ch.bytes)?;
    }
    let sidecar = Sidecar { version: 1, height, width, ranges: q.channels.iter().map(|c| [c.lo, c.hi]).collect() };
    io_util::write_json(&dir.join("meta.json"), &sidecar)
}

pub fn load_quantized(dir: &Path) -> Result<QuantizedField> {
    let meta = dir.join("meta.json");
    if !meta.exists() {
        return Err(Error::MissingCache(dir.to_path_buf()));
    }
    let sidecar: Sidecar = io_util::read_json(&meta)?;
    let mut channels = Vec::with_capacity(sidecar.ranges.len());
    for (c, [lo, hi]) in sidecar.ranges.iter().copied().enumerate() {
        let bytes = io_util::load_gray(&dir.join(channel_file(c)))?;
        if bytes.dim() != (sidecar.height, sidecar.width) {
            return Err(Error::Shape(format!("{}: channel {c} has wrong size", dir.display())));
        }
        channels.push(QuantizedChannel { bytes, lo, hi });
    }
    Ok(QuantizedField { channels })
}
