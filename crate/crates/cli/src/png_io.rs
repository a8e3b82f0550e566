//! 8-bit PNG input and output with a plain gamma 2.2 transfer.
//!
//! Library images hold linear values; files hold `linear^(1/2.2)`.

use std::path::Path;

use image::{ImageFormat, RgbImage};
use splineup::Image;

use crate::error::{CliError, Result};

pub const GAMMA: f64 = 2.2;

pub fn decode_channel(v: f64) -> f64 {
    v.powf(GAMMA)
}

pub fn encode_channel(v: f64) -> u8 {
    (v.clamp(0.0, 1.0).powf(1.0 / GAMMA) * 255.0).round() as u8
}

/// Encoded (display) values in `[0, 1]`, no transfer applied.
pub fn load_encoded(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|source| CliError::Image {
            path: path.to_path_buf(),
            source,
        })?
        .into_rgb32f();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Image::from_fn(w, h, |x, y| {
        img.get_pixel(x as u32, y as u32).0.map(|v| v as f64)
    }))
}

/// Linear values.
pub fn load_linear(path: &Path) -> Result<Image> {
    let mut img = load_encoded(path)?;
    for p in &mut img.pixels {
        *p = p.map(decode_channel);
    }
    Ok(img)
}

pub fn to_rgb8(img: &Image) -> RgbImage {
    RgbImage::from_fn(img.width as u32, img.height as u32, |x, y| {
        image::Rgb(img.get(x as usize, y as usize).map(encode_channel))
    })
}

pub fn save_linear(path: &Path, img: &Image) -> Result<()> {
    to_rgb8(img)
        .save_with_format(path, ImageFormat::Png)
        .map_err(|source| CliError::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Round trip through the 8-bit encoding, as the image would be stored.
pub fn quantize(img: &Image) -> Image {
    Image {
        width: img.width,
        height: img.height,
        pixels: img
            .pixels
            .iter()
            .map(|p| p.map(|v| decode_channel(encode_channel(v) as f64 / 255.0)))
            .collect(),
    }
}
