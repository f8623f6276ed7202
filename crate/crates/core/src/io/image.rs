use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-channel normalization applied after scaling pixels to `[0, 1]`.
pub const NORM_MEAN: [f64; 3] = [0.5, 0.5, 0.5];
pub const NORM_STD: [f64; 3] = [0.5, 0.5, 0.5];

/// 8-bit RGB image, row-major interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

/// Parses a binary PPM (P6) with maxval 255 or less.
pub fn parse_ppm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Image("truncated PPM header".into()));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| Error::Image("header is not ASCII".into()))?);
    }
    if fields[0] != "P6" {
        return Err(Error::Image(format!("expected P6 magic, found {:?}", fields[0])));
    }
    let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| Error::Image(format!("bad {what} {s:?}")));
    let (width, height, maxval) = (num(fields[1], "width")?, num(fields[2], "height")?, num(fields[3], "maxval")?);
    if width == 0 || height == 0 || maxval == 0 || maxval > 255 {
        return Err(Error::Image(format!("unsupported size {width}x{height} or maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = width * height * 3;
    let raster = bytes.get(pos..pos + need).ok_or_else(|| {
        Error::Image(format!("raster has {} bytes, expected {need}", bytes.len().saturating_sub(pos)))
    })?;
    let rgb = if maxval == 255 {
        raster.to_vec()
    } else {
        raster.iter().map(|&v| ((v as usize * 255 + maxval / 2) / maxval).min(255) as u8).collect()
    };
    Ok(Image { width, height, rgb })
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<Image> {
    parse_ppm(&fs::read(path)?)
}

/// Nearest-neighbour resize, sampling source pixel `floor((i + 0.5) * src / dst)`.
pub fn resize_nearest(img: &Image, height: usize, width: usize) -> Image {
    let mut rgb = Vec::with_capacity(height * width * 3);
    for y in 0..height {
        let sy = ((2 * y + 1) * img.height / (2 * height)).min(img.height - 1);
        for x in 0..width {
            let sx = ((2 * x + 1) * img.width / (2 * width)).min(img.width - 1);
            let i = (sy * img.width + sx) * 3;
            rgb.extend_from_slice(&img.rgb[i..i + 3]);
        }
    }
    Image { width, height, rgb }
}

/// A `[1, 3, H, W]` model input: resized, scaled to `[0, 1]`, then normalized
/// with [`NORM_MEAN`] and [`NORM_STD`].
pub fn to_input<T: Scalar>(img: &Image, height: usize, width: usize) -> Result<Tensor<T>> {
    let r = resize_nearest(img, height, width);
    let plane = height * width;
    let mut data = vec![T::zero(); 3 * plane];
    for (p, px) in r.rgb.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + p] = T::of((px[c] as f64 / 255.0 - NORM_MEAN[c]) / NORM_STD[c]);
        }
    }
    Tensor::from_vec(vec![1, 3, height, width], data)
}
