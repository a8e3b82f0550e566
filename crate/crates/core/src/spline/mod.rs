//! Bicubic spline patches and image upscaling.
//!
//! One patch `p(x, y) = [1 x x^2 x^3] A [1 y y^2 y^3]^T` covers the unit cell
//! between four neighbouring pixel centers. Its 16 coefficients are fixed by
//! the value, x/y derivatives and cross derivative at the four corners via
//! `F = C A C^T`. The corner derivatives come either from the rasterizer's
//! analytical channels or from finite differences ([`fd_gradients`]), which
//! turns the same machinery into classical bicubic interpolation.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{AdjointImage, GradientImage, Image, Rgb};

pub type Mat4 = [[f64; 4]; 4];

/// Rows: `f(0)`, `f(1)`, `f'(0)`, `f'(1)` of a cubic in terms of its
/// coefficients.
pub const C: Mat4 = [
    [1.0, 0.0, 0.0, 0.0],
    [1.0, 1.0, 1.0, 1.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 1.0, 2.0, 3.0],
];

const C_INV: Mat4 = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [-3.0, 3.0, -2.0, -1.0],
    [2.0, -2.0, 1.0, 1.0],
];

/// `C` and its inverse.
pub fn cmatrix() -> (Mat4, Mat4) {
    (C, C_INV)
}

pub fn matmul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn transpose(a: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = a[j][i];
        }
    }
    out
}

/// Corner constraints of one channel, each indexed `[x corner][y corner]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CornerData {
    pub f: [[f64; 2]; 2],
    pub fx: [[f64; 2]; 2],
    pub fy: [[f64; 2]; 2],
    pub fxy: [[f64; 2]; 2],
}

impl CornerData {
    /// The `F` block: values and y-derivatives on top, x- and
    /// cross-derivatives below.
    pub fn f_matrix(&self) -> Mat4 {
        let mut m = [[0.0; 4]; 4];
        for xi in 0..2 {
            for yi in 0..2 {
                m[xi][yi] = self.f[xi][yi];
                m[xi][2 + yi] = self.fy[xi][yi];
                m[2 + xi][yi] = self.fx[xi][yi];
                m[2 + xi][2 + yi] = self.fxy[xi][yi];
            }
        }
        m
    }

    fn is_finite(&self) -> bool {
        [self.f, self.fx, self.fy, self.fxy]
            .iter()
            .flatten()
            .flatten()
            .all(|v| v.is_finite())
    }
}

/// Coefficients `a[i][j]` of `x^i y^j`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SplinePatch {
    pub coeffs: Mat4,
}

/// Patch value and derivatives at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchSample {
    pub value: f64,
    pub dx: f64,
    pub dy: f64,
    pub dxy: f64,
}

pub fn solve_patch(corners: &CornerData) -> Result<SplinePatch> {
    if !corners.is_finite() {
        return Err(Error::Domain("corner data must be finite".into()));
    }
    Ok(solve_f(&corners.f_matrix()))
}

/// `A = C^-1 F C^-T`.
#[inline]
fn solve_f(f: &Mat4) -> SplinePatch {
    // C^-1 F
    let mut t = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            t[i][j] = C_INV[i][0] * f[0][j] + C_INV[i][1] * f[1][j] + C_INV[i][2] * f[2][j] + C_INV[i][3] * f[3][j];
        }
    }
    // (C^-1 F) C^-T
    let mut a = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            a[i][j] = t[i][0] * C_INV[j][0] + t[i][1] * C_INV[j][1] + t[i][2] * C_INV[j][2] + t[i][3] * C_INV[j][3];
        }
    }
    SplinePatch { coeffs: a }
}

#[inline]
fn powers(t: f64) -> [f64; 4] {
    [1.0, t, t * t, t * t * t]
}

#[inline]
fn horner(c: &[f64; 4], t: f64) -> f64 {
    ((c[3] * t + c[2]) * t + c[1]) * t + c[0]
}

impl SplinePatch {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let a = &self.coeffs;
        let col = [horner(&a[0], y), horner(&a[1], y), horner(&a[2], y), horner(&a[3], y)];
        horner(&col, x)
    }

    pub fn eval_with_derivatives(&self, x: f64, y: f64) -> PatchSample {
        let a = &self.coeffs;
        let mut rows = [0.0; 4];
        let mut rows_dy = [0.0; 4];
        for i in 0..4 {
            rows[i] = horner(&a[i], y);
            rows_dy[i] = (3.0 * a[i][3] * y + 2.0 * a[i][2]) * y + a[i][1];
        }
        let d = |c: &[f64; 4]| (3.0 * c[3] * x + 2.0 * c[2]) * x + c[1];
        PatchSample {
            value: horner(&rows, x),
            dx: d(&rows),
            dy: horner(&rows_dy, x),
            dxy: d(&rows_dy),
        }
    }

    #[inline]
    fn eval_powers(&self, xp: &[f64; 4], yp: &[f64; 4]) -> f64 {
        let a = &self.coeffs;
        let mut acc = 0.0;
        for i in 0..4 {
            acc += xp[i] * (a[i][0] + a[i][1] * yp[1] + a[i][2] * yp[2] + a[i][3] * yp[3]);
        }
        acc
    }
}

pub fn eval_patch(patch: &SplinePatch, x: f64, y: f64) -> f64 {
    patch.eval(x, y)
}

/// Center-aligned source coordinate of every destination pixel along one
/// axis: output center `u + 0.5` maps to `(u + 0.5) * src / dst - 0.5`.
/// Returns `(cell, fraction)`; cell `k` spans source pixels `k - 1` and `k`
/// (clamped), so cells run over `0..=src`.
fn axis_map(src: usize, dst: usize) -> Vec<(usize, f64)> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|u| {
            let s = (u as f64 + 0.5) * ratio - 0.5;
            let i0 = s.floor();
            let cell = (i0 as isize + 1).clamp(0, src as isize) as usize;
            (cell, s - i0)
        })
        .collect()
}

#[inline]
fn cell_pixel(cell: usize, corner: usize, len: usize) -> usize {
    (cell + corner).saturating_sub(1).min(len - 1)
}

pub(crate) fn output_dims(width: usize, height: usize, factor: f64) -> Result<(usize, usize)> {
    if !(factor.is_finite() && factor >= 1.0) {
        return Err(Error::UnsupportedScale(factor));
    }
    Ok((
        ((width as f64 * factor).round() as usize).max(width),
        ((height as f64 * factor).round() as usize).max(height),
    ))
}

pub(crate) fn check_target(src: (usize, usize), dst: (usize, usize)) -> Result<()> {
    if src.0 == 0 || src.1 == 0 {
        return Err(Error::Dimension("cannot upscale an empty image".into()));
    }
    if dst.0 < src.0 || dst.1 < src.1 {
        return Err(Error::UnsupportedScale(dst.0 as f64 / src.0 as f64));
    }
    Ok(())
}

/// Upscales using the image's own derivative channels as corner constraints.
pub fn upscale_spline(img: &GradientImage, factor: f64) -> Result<Image> {
    let (w, h) = output_dims(img.width, img.height, factor)?;
    upscale_spline_to(img, w, h)
}

pub fn upscale_spline_to(img: &GradientImage, out_width: usize, out_height: usize) -> Result<Image> {
    let mut out = upscale_spline_unclamped(img, out_width, out_height)?;
    for p in &mut out.pixels {
        *p = p.map(|v| v.clamp(0.0, 1.0));
    }
    Ok(out)
}

/// Spline upscaling without the final `[0, 1]` clamp.
pub fn upscale_spline_unclamped(img: &GradientImage, out_width: usize, out_height: usize) -> Result<Image> {
    check_target(img.dims(), (out_width, out_height))?;
    let (w, h) = img.dims();
    let xs = axis_map(w, out_width);
    let ys = axis_map(h, out_height);
    let x_cells = xs[0].0..=xs[out_width - 1].0;
    let y_cells = ys[0].0..=ys[out_height - 1].0;
    let ncx = x_cells.end() - x_cells.start() + 1;
    let cx0 = *x_cells.start();
    let cy0 = *y_cells.start();

    // one patch per cell and channel, shared by every output pixel inside it
    let patches: Vec<Vec<[SplinePatch; 3]>> = y_cells
        .clone()
        .into_par_iter()
        .map(|cy| (cx0..cx0 + ncx).map(|cx| cell_patches(img, cx, cy)).collect())
        .collect();

    let xp: Vec<[f64; 4]> = xs.iter().map(|&(_, t)| powers(t)).collect();
    let rows: Vec<Vec<Rgb>> = (0..out_height)
        .into_par_iter()
        .map(|v| {
            let (cy, ty) = ys[v];
            let yp = powers(ty);
            let row = &patches[cy - cy0];
            (0..out_width)
                .map(|u| {
                    let p = &row[xs[u].0 - cx0];
                    [0, 1, 2].map(|ch| p[ch].eval_powers(&xp[u], &yp))
                })
                .collect()
        })
        .collect();
    Ok(Image {
        width: out_width,
        height: out_height,
        pixels: rows.into_iter().flatten().collect(),
    })
}

fn cell_patches(img: &GradientImage, cx: usize, cy: usize) -> [SplinePatch; 3] {
    let mut f = [[[0.0; 4]; 4]; 3];
    for xi in 0..2 {
        for yi in 0..2 {
            let px = cell_pixel(cx, xi, img.width);
            let py = cell_pixel(cy, yi, img.height);
            let [v, dx, dy, dxy] = img.channels(py * img.width + px);
            for ch in 0..3 {
                f[ch][xi][yi] = v[ch];
                f[ch][xi][2 + yi] = dy[ch];
                f[ch][2 + xi][yi] = dx[ch];
                f[ch][2 + xi][2 + yi] = dxy[ch];
            }
        }
    }
    [solve_f(&f[0]), solve_f(&f[1]), solve_f(&f[2])]
}

/// Transpose of [`upscale_spline`] (before the clamp): scatters output
/// adjoints onto the four channels of the source pixels.
pub fn upscale_backward(img: &GradientImage, factor: f64, adjoint: &Image) -> Result<AdjointImage> {
    let (w, h) = output_dims(img.width, img.height, factor)?;
    if adjoint.dims() != (w, h) {
        return Err(Error::Dimension(format!(
            "adjoint is {}x{} but the upscaled image is {w}x{h}",
            adjoint.width, adjoint.height
        )));
    }
    upscale_backward_to(img.width, img.height, adjoint)
}

pub fn upscale_backward_to(src_width: usize, src_height: usize, adjoint: &Image) -> Result<AdjointImage> {
    let (out_width, out_height) = adjoint.dims();
    check_target((src_width, src_height), (out_width, out_height))?;
    let xs = axis_map(src_width, out_width);
    let ys = axis_map(src_height, out_height);
    let xp: Vec<[f64; 4]> = xs.iter().map(|&(_, t)| powers(t)).collect();

    // group output rows by cell row; each group is contiguous
    let mut groups: Vec<(usize, std::ops::Range<usize>)> = Vec::new();
    for (v, &(cy, _)) in ys.iter().enumerate() {
        match groups.last_mut() {
            Some((c, r)) if *c == cy => r.end = v + 1,
            _ => groups.push((cy, v..v + 1)),
        }
    }

    // dL/dA per cell, then dL/dF = C^-T (dL/dA) C^-1
    let per_row: Vec<(usize, Vec<(usize, [Mat4; 3])>)> = groups
        .into_par_iter()
        .map(|(cy, rows)| {
            let mut cells: Vec<(usize, [Mat4; 3])> = Vec::new();
            for v in rows.clone() {
                let yp = powers(ys[v].1);
                let mut slot = 0usize;
                for u in 0..out_width {
                    let cx = xs[u].0;
                    if cells.is_empty() || cells[slot].0 != cx {
                        slot = match cells.iter().position(|(c, _)| *c == cx) {
                            Some(i) => i,
                            None => {
                                cells.push((cx, [[[0.0; 4]; 4]; 3]));
                                cells.len() - 1
                            }
                        };
                    }
                    let g = adjoint.pixels[v * out_width + u];
                    let ga = &mut cells[slot].1;
                    for i in 0..4 {
                        for j in 0..4 {
                            let k = xp[u][i] * yp[j];
                            for ch in 0..3 {
                                ga[ch][i][j] += g[ch] * k;
                            }
                        }
                    }
                }
            }
            let cells = cells
                .into_iter()
                .map(|(cx, ga)| (cx, ga.map(|m| matmul(&matmul(&transpose(&C_INV), &m), &C_INV))))
                .collect();
            (cy, cells)
        })
        .collect();

    let mut out = AdjointImage::zeros(src_width, src_height);
    for (cy, cells) in per_row {
        for (cx, df) in cells {
            for xi in 0..2 {
                for yi in 0..2 {
                    let px = cell_pixel(cx, xi, src_width);
                    let py = cell_pixel(cy, yi, src_height);
                    let idx = py * src_width + px;
                    for ch in 0..3 {
                        out.w[idx][ch] += df[ch][xi][yi];
                        out.wy[idx][ch] += df[ch][xi][2 + yi];
                        out.wx[idx][ch] += df[ch][2 + xi][yi];
                        out.wxy[idx][ch] += df[ch][2 + xi][2 + yi];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Central differences inside, one-sided at the borders, along x.
fn diff_x(data: &[Rgb], w: usize, h: usize) -> Vec<Rgb> {
    let mut out = vec![[0.0; 3]; w * h];
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        for x in 0..w {
            let (lo, hi, scale) = stencil(x, w);
            out[y * w + x] = [0, 1, 2].map(|ch| (row[hi][ch] - row[lo][ch]) * scale);
        }
    }
    out
}

fn diff_y(data: &[Rgb], w: usize, h: usize) -> Vec<Rgb> {
    let mut out = vec![[0.0; 3]; w * h];
    for y in 0..h {
        let (lo, hi, scale) = stencil(y, h);
        for x in 0..w {
            out[y * w + x] = [0, 1, 2].map(|ch| (data[hi * w + x][ch] - data[lo * w + x][ch]) * scale);
        }
    }
    out
}

fn diff_x_transpose(adj: &[Rgb], w: usize, h: usize) -> Vec<Rgb> {
    let mut out = vec![[0.0; 3]; w * h];
    for y in 0..h {
        for x in 0..w {
            let (lo, hi, scale) = stencil(x, w);
            for ch in 0..3 {
                let g = adj[y * w + x][ch] * scale;
                out[y * w + hi][ch] += g;
                out[y * w + lo][ch] -= g;
            }
        }
    }
    out
}

fn diff_y_transpose(adj: &[Rgb], w: usize, h: usize) -> Vec<Rgb> {
    let mut out = vec![[0.0; 3]; w * h];
    for y in 0..h {
        let (lo, hi, scale) = stencil(y, h);
        for x in 0..w {
            for ch in 0..3 {
                let g = adj[y * w + x][ch] * scale;
                out[hi * w + x][ch] += g;
                out[lo * w + x][ch] -= g;
            }
        }
    }
    out
}

#[inline]
fn stencil(i: usize, n: usize) -> (usize, usize, f64) {
    if i == 0 {
        (0, 1, 1.0)
    } else if i == n - 1 {
        (n - 2, n - 1, 1.0)
    } else {
        (i - 1, i + 1, 0.5)
    }
}

/// Derivative channels estimated from pixel values. Alpha channels are zero.
pub fn fd_gradients(img: &Image) -> Result<GradientImage> {
    let (w, h) = img.dims();
    if w < 2 || h < 2 {
        return Err(Error::Dimension(format!(
            "finite differences need at least 2x2 pixels, got {w}x{h}"
        )));
    }
    let mut out = GradientImage::zeros(w, h);
    out.color.clone_from(&img.pixels);
    out.d_dx = diff_x(&img.pixels, w, h);
    out.d_dy = diff_y(&img.pixels, w, h);
    out.d_dxdy = diff_x(&out.d_dy, w, h);
    Ok(out)
}

/// Transpose of [`fd_gradients`]: folds channel adjoints into a value adjoint.
pub fn fd_gradients_backward(adj: &AdjointImage) -> Result<Image> {
    let (w, h) = adj.dims();
    if w < 2 || h < 2 {
        return Err(Error::Dimension(format!(
            "finite differences need at least 2x2 pixels, got {w}x{h}"
        )));
    }
    let gx = diff_x_transpose(&adj.wx, w, h);
    let gy = diff_y_transpose(&adj.wy, w, h);
    let gxy = diff_y_transpose(&diff_x_transpose(&adj.wxy, w, h), w, h);
    let pixels = (0..w * h)
        .map(|i| [0, 1, 2].map(|ch| adj.w[i][ch] + gx[i][ch] + gy[i][ch] + gxy[i][ch]))
        .collect();
    Ok(Image {
        width: w,
        height: h,
        pixels,
    })
}

/// Classical bicubic upscaling: spline patches from finite-difference
/// derivatives.
pub fn upscale_bicubic_fd(img: &Image, factor: f64) -> Result<Image> {
    upscale_spline(&fd_gradients(img)?, factor)
}

/// One sample of a 1D signal with its slope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HermiteSample {
    pub t: f64,
    pub value: f64,
    pub slope: f64,
}

/// Piecewise cubic Hermite interpolation through `samples` (sorted by `t`).
pub fn hermite1d(samples: &[HermiteSample], t: f64) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Domain("Hermite interpolation needs at least two samples".into()));
    }
    let (first, last) = (samples[0].t, samples[samples.len() - 1].t);
    if !(t >= first && t <= last) {
        return Err(Error::Domain(format!("t = {t} lies outside [{first}, {last}]")));
    }
    let k = samples.partition_point(|s| s.t <= t).clamp(1, samples.len() - 1);
    let (s0, s1) = (&samples[k - 1], &samples[k]);
    let dt = s1.t - s0.t;
    let u = (t - s0.t) / dt;
    // same cubic as one row of `C`: values and slopes at both ends
    let f = [s0.value, s1.value, s0.slope * dt, s1.slope * dt];
    let mut coeffs = [0.0; 4];
    for (i, c) in coeffs.iter_mut().enumerate() {
        *c = (0..4).map(|j| C_INV[i][j] * f[j]).sum();
    }
    Ok(horner(&coeffs, u))
}

/// Central-difference slopes (one-sided at the ends) for uniformly spaced
/// values.
pub fn fd_slopes(values: &[f64], dt: f64) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| {
            if n < 2 {
                0.0
            } else {
                let (lo, hi, scale) = stencil(i, n);
                (values[hi] - values[lo]) * scale / dt
            }
        })
        .collect()
}
