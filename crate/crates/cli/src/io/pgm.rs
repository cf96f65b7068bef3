//! Binary portable graymap (P5) export with a sidecar text file documenting
//! the value mapping.

use std::fs;
use std::path::Path;

use super::{IoError, Result};

/// How pixel values map onto the 0..=255 gray levels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GrayMapping {
    /// Sensory range [-0.9, 0.9] mapped linearly (so a uniform -0.9 frame is
    /// all-black).
    Signed,
    /// Nonnegative map values scaled by the given maximum (per-figure max
    /// scaling; the raw values live in the CSV exports).
    NonNegative { max: f64 },
}

fn quantize(v: f64, mapping: GrayMapping) -> u8 {
    let unit = match mapping {
        GrayMapping::Signed => (v + 0.9) / 1.8,
        GrayMapping::NonNegative { max } => {
            if max > 0.0 {
                v / max
            } else {
                0.0
            }
        }
    };
    (unit.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `pixels` (row-major, `width * height`) as a binary P5 graymap plus
/// a `<path>.txt` sidecar describing the mapping.
pub fn export_frame(
    pixels: &[f64],
    width: usize,
    height: usize,
    mapping: GrayMapping,
    path: &Path,
) -> Result<()> {
    if pixels.len() != width * height {
        return Err(IoError::Other(format!(
            "frame has {} pixels, expected {}x{}",
            pixels.len(),
            width,
            height
        )));
    }
    match mapping {
        GrayMapping::Signed => {
            if pixels.iter().any(|v| *v < -0.9 - 1e-9 || *v > 0.9 + 1e-9) {
                return Err(IoError::Other(
                    "signed frame values must lie in [-0.9, 0.9]".into(),
                ));
            }
        }
        GrayMapping::NonNegative { .. } => {
            if pixels.iter().any(|v| *v < 0.0) {
                return Err(IoError::Other("map values must be nonnegative".into()));
            }
        }
    }
    let mut out = Vec::with_capacity(pixels.len() + 32);
    out.extend_from_slice(format!("P5\n{width} {height}\n255\n").as_bytes());
    out.extend(pixels.iter().map(|v| quantize(*v, mapping)));
    fs::write(path, out)?;
    let sidecar = match mapping {
        GrayMapping::Signed => {
            "mapping: linear, value -0.9 -> gray 0, value 0.9 -> gray 255\n".to_string()
        }
        GrayMapping::NonNegative { max } => format!(
            "mapping: linear, value 0 -> gray 0, value {max} -> gray 255\n"
        ),
    };
    fs::write(path.with_extension("pgm.txt"), sidecar)?;
    Ok(())
}

/// Reads back a P5 frame written by [`export_frame`] (used by round-trip
/// tests).
pub fn read_frame(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path)?;
    let header_end = bytes
        .iter()
        .enumerate()
        .filter(|(_, b)| **b == b'\n')
        .nth(2)
        .map(|(i, _)| i + 1)
        .ok_or_else(|| IoError::Other("malformed P5 header".into()))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|e| IoError::Other(e.to_string()))?;
    let mut parts = header.split_ascii_whitespace();
    if parts.next() != Some("P5") {
        return Err(IoError::Other("not a P5 graymap".into()));
    }
    let width: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| IoError::Other("bad width".into()))?;
    let height: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| IoError::Other("bad height".into()))?;
    if parts.next() != Some("255") {
        return Err(IoError::Other("expected maxval 255".into()));
    }
    Ok((width, height, bytes[header_end..].to_vec()))
}
