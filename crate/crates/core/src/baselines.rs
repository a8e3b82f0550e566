//! Classical resamplers used as comparison anchors.
//!
//! All of them share the center-aligned mapping of [`crate::spline`]: output
//! pixel center `u + 0.5` lands on source coordinate `(u + 0.5) * src / dst - 0.5`.
//! Out-of-range taps are clamped to the border.

use rayon::prelude::*;

use crate::error::Result;
use crate::image::{Image, Rgb};
use crate::spline::{check_target, output_dims};

pub use crate::metrics::{psnr, ssim};

/// Lobes of the default Lanczos kernel.
pub const LANCZOS_LOBES: usize = 3;

type Taps = Vec<Vec<(usize, f64)>>;

fn source_coord(u: usize, src: usize, dst: usize) -> f64 {
    (u as f64 + 0.5) * src as f64 / dst as f64 - 0.5
}

fn clamp_index(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

fn nearest_taps(src: usize, dst: usize) -> Taps {
    (0..dst)
        .map(|u| {
            let i = ((u as f64 + 0.5) * src as f64 / dst as f64).floor() as isize;
            vec![(clamp_index(i, src), 1.0)]
        })
        .collect()
}

fn linear_taps(src: usize, dst: usize) -> Taps {
    (0..dst)
        .map(|u| {
            let s = source_coord(u, src, dst);
            let i0 = s.floor();
            let t = s - i0;
            let i0 = i0 as isize;
            vec![(clamp_index(i0, src), 1.0 - t), (clamp_index(i0 + 1, src), t)]
        })
        .collect()
}

/// Windowed sinc `sinc(x) sinc(x / a)` for `|x| < a`.
pub fn lanczos_kernel(x: f64, a: usize) -> f64 {
    let a = a as f64;
    if x == 0.0 {
        return 1.0;
    }
    if x.abs() >= a {
        return 0.0;
    }
    let px = std::f64::consts::PI * x;
    a * px.sin() * (px / a).sin() / (px * px)
}

fn lanczos_taps(src: usize, dst: usize, a: usize) -> Taps {
    (0..dst)
        .map(|u| {
            let s = source_coord(u, src, dst);
            let base = s.floor() as isize;
            let mut taps: Vec<(usize, f64)> = (base - a as isize + 1..=base + a as isize)
                .map(|j| (clamp_index(j, src), lanczos_kernel(s - j as f64, a)))
                .collect();
            let total: f64 = taps.iter().map(|t| t.1).sum();
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

/// Applies per-axis taps: first along x, then along y.
fn resample(img: &Image, xt: &Taps, yt: &Taps) -> Image {
    let (w, ow, oh) = (img.width, xt.len(), yt.len());
    let horizontal: Vec<Vec<Rgb>> = (0..img.height)
        .into_par_iter()
        .map(|y| {
            let row = &img.pixels[y * w..(y + 1) * w];
            xt.iter()
                .map(|taps| weighted(taps.iter().map(|&(i, wt)| (&row[i], wt))))
                .collect()
        })
        .collect();
    let rows: Vec<Vec<Rgb>> = (0..oh)
        .into_par_iter()
        .map(|v| {
            (0..ow)
                .map(|u| weighted(yt[v].iter().map(|&(j, wt)| (&horizontal[j][u], wt))))
                .collect()
        })
        .collect();
    Image {
        width: ow,
        height: oh,
        pixels: rows.into_iter().flatten().collect(),
    }
}

fn weighted<'a>(taps: impl Iterator<Item = (&'a Rgb, f64)>) -> Rgb {
    let mut acc = [0.0; 3];
    for (p, wt) in taps {
        for ch in 0..3 {
            acc[ch] += wt * p[ch];
        }
    }
    acc
}

fn dims_for(img: &Image, factor: f64) -> Result<(usize, usize)> {
    let dims = output_dims(img.width, img.height, factor)?;
    check_target(img.dims(), dims)?;
    Ok(dims)
}

pub fn upscale_nearest(img: &Image, factor: f64) -> Result<Image> {
    let (w, h) = dims_for(img, factor)?;
    Ok(resample(img, &nearest_taps(img.width, w), &nearest_taps(img.height, h)))
}

pub fn upscale_bilinear(img: &Image, factor: f64) -> Result<Image> {
    let (w, h) = dims_for(img, factor)?;
    Ok(resample(img, &linear_taps(img.width, w), &linear_taps(img.height, h)))
}

/// Separable Lanczos with `a` lobes; taps are renormalized per output sample.
pub fn upscale_lanczos(img: &Image, factor: f64, a: usize) -> Result<Image> {
    let (w, h) = dims_for(img, factor)?;
    let a = a.max(1);
    Ok(resample(
        img,
        &lanczos_taps(img.width, w, a),
        &lanczos_taps(img.height, h, a),
    ))
}
