//! Image quality metrics: PSNR and SSIM (with its gradient).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;

/// Reported in place of `+inf` for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_dims(b)?;
    if a.is_empty() {
        return Err(Error::Dimension("cannot compare empty images".into()));
    }
    let sum: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(p, q)| (0..3).map(|ch| (p[ch] - q[ch]).powi(2)).sum::<f64>())
        .sum();
    Ok(sum / (3 * a.pixels.len()) as f64)
}

/// `10 log10(1 / MSE)` for data range 1, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((-10.0 * m.log10()).min(PSNR_CAP_DB))
}

/// Normalized 1D Gaussian window.
pub fn ssim_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.map(|v| v / total)
}

/// Single-channel plane, row-major.
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Plane {
    fn channel(img: &Image, ch: usize) -> Self {
        Self {
            w: img.width,
            h: img.height,
            data: img.pixels.iter().map(|p| p[ch]).collect(),
        }
    }

    fn map2(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Valid-mode separable correlation with `k`.
    fn filter_valid(&self, k: &[f64]) -> Plane {
        let n = k.len();
        let (ow, oh) = (self.w + 1 - n, self.h + 1 - n);
        let mut tmp = vec![0.0; ow * self.h];
        for y in 0..self.h {
            let row = &self.data[y * self.w..(y + 1) * self.w];
            for x in 0..ow {
                tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
            }
        }
        let mut data = vec![0.0; ow * oh];
        for y in 0..oh {
            for x in 0..ow {
                data[y * ow + x] = (0..n).map(|j| k[j] * tmp[(y + j) * ow + x]).sum();
            }
        }
        Plane { w: ow, h: oh, data }
    }

    /// Transpose of [`Plane::filter_valid`]: back to `(w + n - 1) x (h + n - 1)`.
    fn filter_valid_transpose(&self, k: &[f64]) -> Plane {
        let n = k.len();
        let (fw, fh) = (self.w + n - 1, self.h + n - 1);
        let mut tmp = vec![0.0; self.w * fh];
        for y in 0..self.h {
            for x in 0..self.w {
                let v = self.data[y * self.w + x];
                for (j, kj) in k.iter().enumerate() {
                    tmp[(y + j) * self.w + x] += kj * v;
                }
            }
        }
        let mut data = vec![0.0; fw * fh];
        for y in 0..fh {
            for x in 0..self.w {
                let v = tmp[y * self.w + x];
                for (i, ki) in k.iter().enumerate() {
                    data[y * fw + x + i] += ki * v;
                }
            }
        }
        Plane { w: fw, h: fh, data }
    }
}

/// Windowed statistics of one channel pair.
struct LocalStats {
    mu_a: Plane,
    mu_b: Plane,
    e_aa: Plane,
    e_bb: Plane,
    e_ab: Plane,
}

impl LocalStats {
    fn new(a: &Plane, b: &Plane, k: &[f64]) -> Self {
        Self {
            mu_a: a.filter_valid(k),
            mu_b: b.filter_valid(k),
            e_aa: a.map2(a, |x, y| x * y).filter_valid(k),
            e_bb: b.map2(b, |x, y| x * y).filter_valid(k),
            e_ab: a.map2(b, |x, y| x * y).filter_valid(k),
        }
    }

    /// `(A1, A2, B1, B2)` with `S = A1 A2 / (B1 B2)`.
    fn terms(&self, i: usize) -> [f64; 4] {
        let (ma, mb) = (self.mu_a.data[i], self.mu_b.data[i]);
        let cov = self.e_ab.data[i] - ma * mb;
        let var_a = self.e_aa.data[i] - ma * ma;
        let var_b = self.e_bb.data[i] - mb * mb;
        [
            2.0 * ma * mb + SSIM_C1,
            2.0 * cov + SSIM_C2,
            ma * ma + mb * mb + SSIM_C1,
            var_a + var_b + SSIM_C2,
        ]
    }
}

fn check_ssim_dims(a: &Image, b: &Image) -> Result<()> {
    a.ensure_same_dims(b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            a.width, a.height
        )));
    }
    Ok(())
}

/// Mean local SSIM over valid window positions, averaged over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_ssim_dims(a, b)?;
    let k = ssim_window();
    let per_channel: Vec<f64> = (0..3)
        .into_par_iter()
        .map(|ch| {
            let stats = LocalStats::new(&Plane::channel(a, ch), &Plane::channel(b, ch), &k);
            let n = stats.mu_a.data.len();
            (0..n)
                .map(|i| {
                    let [a1, a2, b1, b2] = stats.terms(i);
                    a1 * a2 / (b1 * b2)
                })
                .sum::<f64>()
                / n as f64
        })
        .collect();
    Ok(per_channel.iter().sum::<f64>() / 3.0)
}

/// SSIM and its gradient with respect to every pixel of `a`.
pub fn ssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Image)> {
    check_ssim_dims(a, b)?;
    let k = ssim_window();
    let per_channel: Vec<(f64, Vec<f64>)> = (0..3)
        .into_par_iter()
        .map(|ch| {
            let pa = Plane::channel(a, ch);
            let pb = Plane::channel(b, ch);
            let stats = LocalStats::new(&pa, &pb, &k);
            let n = stats.mu_a.data.len();
            let norm = 1.0 / (3 * n) as f64;
            let (mw, mh) = (stats.mu_a.w, stats.mu_a.h);
            let mut g_mu = Plane {
                w: mw,
                h: mh,
                data: vec![0.0; n],
            };
            let mut g_aa = Plane {
                w: mw,
                h: mh,
                data: vec![0.0; n],
            };
            let mut g_ab = Plane {
                w: mw,
                h: mh,
                data: vec![0.0; n],
            };
            let mut total = 0.0;
            for i in 0..n {
                let [a1, a2, b1, b2] = stats.terms(i);
                let s = a1 * a2 / (b1 * b2);
                total += s;
                let (ma, mb) = (stats.mu_a.data[i], stats.mu_b.data[i]);
                let s = s * norm;
                g_mu.data[i] = s * (2.0 * mb / a1 - 2.0 * mb / a2 - 2.0 * ma / b1 + 2.0 * ma / b2);
                g_aa.data[i] = -s / b2;
                g_ab.data[i] = 2.0 * s / a2;
            }
            let p = g_mu.filter_valid_transpose(&k);
            let q = g_aa.filter_valid_transpose(&k);
            let r = g_ab.filter_valid_transpose(&k);
            let grad = (0..pa.data.len())
                .map(|i| p.data[i] + 2.0 * pa.data[i] * q.data[i] + pb.data[i] * r.data[i])
                .collect();
            (total * norm, grad)
        })
        .collect();
    let value = per_channel.iter().map(|c| c.0).sum();
    let grad = Image {
        width: a.width,
        height: a.height,
        pixels: (0..a.pixels.len())
            .map(|i| [per_channel[0].1[i], per_channel[1].1[i], per_channel[2].1[i]])
            .collect(),
    };
    Ok((value, grad))
}
