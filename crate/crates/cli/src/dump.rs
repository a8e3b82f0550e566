//! Binary dumps of a rendered [`GradientImage`].
//!
//! Layout: the magic `GIMG`, width and height as little-endian `u32`, then 16
//! row-major little-endian `f32` planes: color (3), d/dx (3), d/dy (3),
//! d2/dxdy (3), alpha, alpha d/dx, alpha d/dy, alpha d2/dxdy.

use std::fs;
use std::path::Path;

use splineup::image::Rgb;
use splineup::GradientImage;

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"GIMG";
pub const PLANES: usize = 16;

pub fn encode(img: &GradientImage) -> Vec<u8> {
    let n = img.width * img.height;
    let mut out = Vec::with_capacity(12 + n * PLANES * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(img.width as u32).to_le_bytes());
    out.extend_from_slice(&(img.height as u32).to_le_bytes());
    let mut put = |v: f64| out.extend_from_slice(&(v as f32).to_le_bytes());
    for plane in [&img.color, &img.d_dx, &img.d_dy, &img.d_dxdy] {
        for ch in 0..3 {
            plane.iter().for_each(|p| put(p[ch]));
        }
    }
    for plane in [&img.alpha, &img.alpha_dx, &img.alpha_dy, &img.alpha_dxdy] {
        plane.iter().for_each(|&v| put(v));
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<GradientImage> {
    let bad = |msg: String| CliError::Invalid(format!("malformed gradient dump: {msg}"));
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(bad("missing GIMG header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (w, h) = (word(4), word(8));
    let n = w.checked_mul(h).ok_or_else(|| bad(format!("size {w}x{h} overflows")))?;
    let expected = n.checked_mul(PLANES * 4).and_then(|v| v.checked_add(12));
    if expected != Some(bytes.len()) {
        return Err(bad(format!("{w}x{h} needs {} payload floats", n * PLANES)));
    }
    let floats: Vec<f64> = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let plane = |k: usize| &floats[k * n..(k + 1) * n];
    let rgb = |k: usize| -> Vec<Rgb> {
        (0..n)
            .map(|i| [plane(k)[i], plane(k + 1)[i], plane(k + 2)[i]])
            .collect()
    };
    let mut img = GradientImage::zeros(w, h);
    img.color = rgb(0);
    img.d_dx = rgb(3);
    img.d_dy = rgb(6);
    img.d_dxdy = rgb(9);
    img.alpha = plane(12).to_vec();
    img.transmittance = img.alpha.iter().map(|a| 1.0 - a).collect();
    img.alpha_dx = plane(13).to_vec();
    img.alpha_dy = plane(14).to_vec();
    img.alpha_dxdy = plane(15).to_vec();
    Ok(img)
}

pub fn save(path: &Path, img: &GradientImage) -> Result<()> {
    fs::write(path, encode(img)).map_err(|e| CliError::io(path, e))
}

pub fn load(path: &Path) -> Result<GradientImage> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes)
}
