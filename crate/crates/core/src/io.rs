//! File formats.
//!
//! Float images share one layout, all little-endian:
//!
//! ```text
//! magic   4 bytes   "HDRF" (RGB environment maps) or "DPTF" (depth maps)
//! width   u32
//! height  u32
//! data    f32 x width x height x channels, row-major, row 0 first
//! ```

use std::io::Cursor;

use image::{ImageBuffer, ImageFormat, Rgb as PxRgb};
use thiserror::Error;

use crate::compositor::DepthMap;
use crate::lighting::EnvironmentMap;
use crate::scene::Rgb;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("bad header: expected {0}")]
    BadMagic(&'static str),
    #[error("truncated data: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("png encoding failed: {0}")]
    Png(#[from] image::ImageError),
}

fn write_float_image(magic: &[u8; 4], width: u32, height: u32, data: impl Iterator<Item = f64>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.extend_from_slice(&width.to_le_bytes());
    out.extend_from_slice(&height.to_le_bytes());
    for v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn read_float_image(magic: &'static str, channels: usize, bytes: &[u8]) -> Result<(u32, u32, Vec<f64>), IoError> {
    if bytes.len() < 12 || &bytes[..4] != magic.as_bytes() {
        return Err(IoError::BadMagic(magic));
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let expected = 12 + 4 * channels * width as usize * height as usize;
    if bytes.len() != expected {
        return Err(IoError::Truncated { expected, got: bytes.len() });
    }
    let data = bytes[12..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    Ok((width, height, data))
}

pub fn encode_env_map(env: &EnvironmentMap) -> Vec<u8> {
    write_float_image(b"HDRF", env.width, env.height, env.pixels.iter().flatten().copied())
}

pub fn decode_env_map(bytes: &[u8]) -> Result<EnvironmentMap, IoError> {
    let (width, height, data) = read_float_image("HDRF", 3, bytes)?;
    Ok(EnvironmentMap { width, height, pixels: data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect() })
}

pub fn encode_depth_map(depth: &DepthMap) -> Vec<u8> {
    write_float_image(b"DPTF", depth.width, depth.height, depth.values.iter().copied())
}

pub fn decode_depth_map(bytes: &[u8]) -> Result<DepthMap, IoError> {
    let (width, height, values) = read_float_image("DPTF", 1, bytes)?;
    Ok(DepthMap { width, height, values })
}

/// PNG of row-major LDR pixels in [0, 1].
pub fn encode_png(width: u32, height: u32, pixels: &[Rgb]) -> Result<Vec<u8>, IoError> {
    let img = ImageBuffer::from_fn(width, height, |x, y| {
        let p = pixels[(y * width + x) as usize];
        PxRgb(p.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
    });
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}
