//! Reading and writing images and masks.
//!
//! Raw float container (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "DSRAWF32"
//! version  u32      1
//! channels u32
//! height   u32
//! width    u32
//! values   f32 × channels·height·width, row-major C×H×W
//! ```
//!
//! Files are recognised by the magic, not by extension. A single-channel
//! raw file with integral values is accepted as a mask.

use std::path::Path;

use image::{GrayImage, ImageReader, RgbImage};

use super::{ImageBuf, IndexMask};
use crate::error::{Error, Result};

pub const RAW_MAGIC: &[u8; 8] = b"DSRAWF32";
pub const RAW_VERSION: u32 = 1;
const RAW_HEADER: usize = 8 + 4 * 4;

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), detail: detail.into() }
}

pub fn encode_raw(image: &ImageBuf) -> Vec<u8> {
    let mut out = Vec::with_capacity(RAW_HEADER + 4 * image.data.len());
    out.extend_from_slice(RAW_MAGIC);
    for v in [RAW_VERSION, image.channels as u32, image.height as u32, image.width as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &v in &image.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_raw(bytes: &[u8], path: &Path) -> Result<ImageBuf> {
    if bytes.len() < RAW_HEADER || &bytes[..8] != RAW_MAGIC {
        return Err(format_err(path, "not a raw float container"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    if word(0) != RAW_VERSION as usize {
        return Err(format_err(path, format!("unsupported raw version {}", word(0))));
    }
    let (c, h, w) = (word(1), word(2), word(3));
    let n = c * h * w;
    if bytes.len() != RAW_HEADER + 4 * n {
        return Err(format_err(
            path,
            format!("expected {} value bytes for {c}x{h}x{w}, found {}", 4 * n, bytes.len() - RAW_HEADER),
        ));
    }
    let data = bytes[RAW_HEADER..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    ImageBuf::new(c, h, w, data)
}

pub fn is_raw(bytes: &[u8]) -> bool {
    bytes.starts_with(RAW_MAGIC)
}

/// Loads a PNG (grey → 1 channel, anything else → RGB) or raw container.
pub fn load_image(path: &Path) -> Result<ImageBuf> {
    let bytes = std::fs::read(path)?;
    if is_raw(&bytes) {
        return decode_raw(&bytes, path);
    }
    let img = ImageReader::new(std::io::Cursor::new(bytes))
        .with_guessed_format()?
        .decode()
        .map_err(|e| format_err(path, e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, raw) = if img.color().channel_count() <= 2 {
        (1, img.into_luma8().into_raw())
    } else {
        (3, img.into_rgb8().into_raw())
    };
    // interleaved HWC → planar CHW
    let mut data = vec![0.0; channels * h * w];
    for (i, px) in raw.chunks_exact(channels).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            data[c * h * w + i] = v as f64 / 255.0;
        }
    }
    ImageBuf::new(channels, h, w, data)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an 8-bit PNG (1 or 3 channels); values are clamped to `[0, 1]`.
pub fn save_png(path: &Path, image: &ImageBuf) -> Result<()> {
    let (h, w) = (image.height, image.width);
    match image.channels {
        1 => {
            let buf: Vec<u8> = image.data.iter().map(|&v| quantize(v)).collect();
            GrayImage::from_raw(w as u32, h as u32, buf).expect("sized").save(path)?;
        }
        3 => {
            let p = h * w;
            let buf: Vec<u8> = (0..p)
                .flat_map(|i| (0..3).map(move |c| i + c * p))
                .map(|j| quantize(image.data[j]))
                .collect();
            RgbImage::from_raw(w as u32, h as u32, buf).expect("sized").save(path)?;
        }
        c => return Err(format_err(path, format!("PNG output needs 1 or 3 channels, got {c}"))),
    }
    Ok(())
}

pub fn save_raw(path: &Path, image: &ImageBuf) -> Result<()> {
    std::fs::write(path, encode_raw(image))?;
    Ok(())
}

/// Loads an 8-bit single-channel PNG of class indices (or an integral
/// single-channel raw container).
pub fn load_mask(path: &Path) -> Result<IndexMask> {
    let bytes = std::fs::read(path)?;
    if is_raw(&bytes) {
        let im = decode_raw(&bytes, path)?;
        if im.channels != 1 {
            return Err(format_err(path, format!("mask must have 1 channel, got {}", im.channels)));
        }
        let data = im
            .data
            .iter()
            .map(|&v| {
                if v.fract() == 0.0 && (0.0..=255.0).contains(&v) {
                    Ok(v as u8)
                } else {
                    Err(format_err(path, format!("mask value {v} is not a class index")))
                }
            })
            .collect::<Result<_>>()?;
        return IndexMask::new(im.height, im.width, data);
    }
    let img = ImageReader::new(std::io::Cursor::new(bytes))
        .with_guessed_format()?
        .decode()
        .map_err(|e| format_err(path, e.to_string()))?;
    if img.color().channel_count() != 1 {
        return Err(format_err(path, "mask PNG must be single-channel"));
    }
    let g = img.into_luma8();
    IndexMask::new(g.height() as usize, g.width() as usize, g.into_raw())
}

pub fn save_mask(path: &Path, mask: &IndexMask) -> Result<()> {
    GrayImage::from_raw(mask.width as u32, mask.height as u32, mask.data.clone())
        .expect("sized")
        .save(path)?;
    Ok(())
}
