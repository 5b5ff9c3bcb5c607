//! Reading and writing 8-bit grayscale images (binary PGM and PNG).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Image;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Quantizes an intensity to 8 bits with round-half-up.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Loads `.pgm` or `.png` based on the file extension.
pub fn load_image(path: &Path) -> Result<Image> {
    match extension(path).as_deref() {
        Some("pgm") => read_pgm(path),
        Some("png") => read_png(path),
        _ => Err(format_err(path, "unsupported image extension, expected .pgm or .png")),
    }
}

/// Saves to `.pgm` or `.png` based on the file extension.
pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    match extension(path).as_deref() {
        Some("pgm") => write_pgm(path, img),
        Some("png") => write_png(path, img),
        _ => Err(format_err(path, "unsupported image extension, expected .pgm or .png")),
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|v| quantize(*v)));
    out
}

pub fn write_pgm(path: &Path, img: &Image) -> Result<()> {
    fs::write(path, encode_pgm(img)).map_err(|e| io_err(path, e))
}

pub fn read_pgm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    decode_pgm(&bytes).map_err(|reason| format_err(path, reason))
}

/// Parses a binary (P5) PGM with maxval up to 255.
pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut pos = 0;
    let mut next_token = || -> std::result::Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PGM header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = next_token()?;
    if magic != "P5" {
        return Err(format!("expected binary PGM magic P5, found {magic:?}"));
    }
    let mut num = |what: &str| -> std::result::Result<usize, String> {
        let tok = next_token()?;
        tok.parse::<usize>()
            .map_err(|_| format!("invalid PGM {what}: {tok:?}"))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported PGM maxval {maxval}, only 8-bit files are read"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = pos + 1;
    let need = width * height;
    if bytes.len() < start + need {
        return Err(format!(
            "PGM raster truncated: need {need} bytes, found {}",
            bytes.len().saturating_sub(start)
        ));
    }
    let data = bytes[start..start + need]
        .iter()
        .map(|b| (*b as f64 / maxval as f64).min(1.0))
        .collect();
    Image::new(height, width, data).map_err(|e| e.to_string())
}

fn read_png(path: &Path) -> Result<Image> {
    let dynamic = image::open(path).map_err(|e| format_err(path, e.to_string()))?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    let data: Vec<f64> = if dynamic.color().has_color() {
        dynamic
            .to_rgb8()
            .pixels()
            .map(|p| {
                (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0
            })
            .collect()
    } else {
        dynamic
            .to_luma8()
            .pixels()
            .map(|p| p[0] as f64 / 255.0)
            .collect()
    };
    Image::clamped(h, w, data).map_err(|e| format_err(path, e.to_string()))
}

fn write_png(path: &Path, img: &Image) -> Result<()> {
    let raw: Vec<u8> = img.data().iter().map(|v| quantize(*v)).collect();
    let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, raw)
        .ok_or_else(|| format_err(path, "raster size mismatch"))?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| format_err(path, e.to_string()))
}
