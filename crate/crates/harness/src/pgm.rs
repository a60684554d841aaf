//! 8-bit grayscale PGM (P5) export of strain fields and error images.

use stampnet_core::{Error, Result};
use std::io::Write;
use std::path::Path;

/// How field values map to 8-bit gray levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldNormalization {
    /// This image's [min, max] maps to [0, 255].
    PerImage,
    /// A caller-supplied range maps to [0, 255] (shared across images).
    Fixed { min: f64, max: f64 },
    /// Signed data: 0 maps to 128, +-max|v| to 255/1.
    SymmetricAboutZero,
}

/// Write a row-major field as a binary PGM.
pub fn export_field_image(
    field: &[f64],
    width: usize,
    height: usize,
    path: &Path,
    norm: FieldNormalization,
) -> Result<()> {
    if field.len() != width * height {
        return Err(Error::ElementCount {
            shape: vec![height, width],
            expected: width * height,
            got: field.len(),
        });
    }
    let pixels = quantize(field, norm);
    let mut f = std::fs::File::create(path)?;
    write!(f, "P5\n{width} {height}\n255\n")?;
    f.write_all(&pixels)?;
    Ok(())
}

/// The quantization behind [`export_field_image`], exposed so tests can
/// compare round-tripped bytes.
pub fn quantize(field: &[f64], norm: FieldNormalization) -> Vec<u8> {
    match norm {
        FieldNormalization::PerImage => {
            let min = field.iter().copied().fold(f64::INFINITY, f64::min);
            let max = field.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            scale(field, min, max)
        }
        FieldNormalization::Fixed { min, max } => scale(field, min, max),
        FieldNormalization::SymmetricAboutZero => {
            let bound = field.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            field
                .iter()
                .map(|&v| {
                    if bound == 0.0 {
                        128
                    } else {
                        (128.0 + 127.0 * v / bound).round().clamp(0.0, 255.0) as u8
                    }
                })
                .collect()
        }
    }
}

fn scale(field: &[f64], min: f64, max: f64) -> Vec<u8> {
    let range = max - min;
    field
        .iter()
        .map(|&v| {
            if range <= 0.0 {
                0
            } else {
                (255.0 * (v - min) / range).round().clamp(0.0, 255.0) as u8
            }
        })
        .collect()
}

/// Read back a binary PGM written by [`export_field_image`].
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = std::fs::read(path)?;
    let bad = |detail: &str| Error::Format { context: "pgm", detail: detail.into() };
    // Header: magic, width, height, maxval as whitespace-separated tokens.
    let mut pos = 0;
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    if tokens[0] != "P5" {
        return Err(bad("not a binary PGM"));
    }
    let width: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
    let height: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
    if tokens[3] != "255" {
        return Err(bad("expected maxval 255"));
    }
    pos += 1; // single whitespace after maxval
    let data = bytes.get(pos..pos + width * height).ok_or_else(|| bad("truncated pixel data"))?;
    Ok((width, height, data.to_vec()))
}
