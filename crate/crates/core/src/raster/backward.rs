//! Reverse-mode pass through the gradient-emitting rasterizer.
//!
//! Every output channel of a pixel (`I`, `I_x`, `I_y`, `I_xy`) depends on
//! splat `k` only through
//!
//! ```text
//! I = F + T R + T alpha (c - R)
//! ```
//!
//! where `T = 1 - A_{k-1}` is the transmittance in front of `k`, `R` is the
//! back-to-front accumulation `B^_{k+1}` of everything behind it (background
//! included) and `F` collects the splats in front. Differentiating that
//! product in `x` and `y` gives the adjoints of `alpha_k`, its three spatial
//! derivatives and `c_k`; `T` and its derivatives are recovered from the
//! stored terminal state by inverting the blend step, and `R` is rebuilt as
//! the sweep runs back to front.

use rayon::prelude::*;

use super::forward::{PreparedScene, RenderOptions};
use crate::error::{Error, Result};
use crate::gaussian::{AlphaSample, Scene};
use crate::image::{AdjointImage, GradientImage, Rgb};

/// Blend state after `i` splats, held as the transmittance `T_i = 1 - A_i`
/// and the x, y and xy derivatives of `ln T_i`.
///
/// Each step multiplies `T` by `1 - alpha` and adds a term to the log
/// derivatives, so undoing a step is a division and a subtraction. Working
/// on `A_i` directly would divide the rounding error by `1 - alpha` at every
/// inverted step, which dominates once `T` gets small.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaState {
    pub t: f64,
    pub lx: f64,
    pub ly: f64,
    pub lxy: f64,
}

impl Default for AlphaState {
    fn default() -> Self {
        Self {
            t: 1.0,
            lx: 0.0,
            ly: 0.0,
            lxy: 0.0,
        }
    }
}

/// Increments of `ln T` for one splat: `-d(ln(1 - alpha))` in x, y and xy.
#[inline]
fn log_step(al: &AlphaSample) -> (f64, f64, f64, f64) {
    let keep = 1.0 - al.alpha;
    let gx = al.dx / keep;
    let gy = al.dy / keep;
    (keep, gx, gy, al.dxy / keep + gx * gy)
}

impl AlphaState {
    /// State from terminal values: the transmittance `T_N` and the
    /// derivatives of `A_N`.
    pub fn from_terminal(t: f64, ax: f64, ay: f64, axy: f64) -> Self {
        let lx = -ax / t;
        let ly = -ay / t;
        Self {
            t,
            lx,
            ly,
            lxy: -axy / t - lx * ly,
        }
    }

    /// Forward blend step `A_i = A_{i-1} + alpha_i (1 - A_{i-1})`.
    pub fn blend(&self, al: &AlphaSample) -> AlphaState {
        let (keep, gx, gy, gxy) = log_step(al);
        AlphaState {
            t: self.t * keep,
            lx: self.lx - gx,
            ly: self.ly - gy,
            lxy: self.lxy - gxy,
        }
    }

    /// `[T, dT/dx, dT/dy, d2T/dxdy]`.
    pub fn transmittance(&self) -> [f64; 4] {
        let t = self.t;
        [t, t * self.lx, t * self.ly, t * (self.lxy + self.lx * self.ly)]
    }

    /// `[A, dA/dx, dA/dy, d2A/dxdy]`.
    pub fn accumulated(&self) -> [f64; 4] {
        let [t, tx, ty, txy] = self.transmittance();
        [1.0 - t, -tx, -ty, -txy]
    }
}

/// Smallest `1 - alpha` the inversion accepts.
pub const MIN_INVERSION_KEEP: f64 = 1e-3;

/// Recovers the state before the splat that was blended last.
pub fn invert_alpha_state(state: &AlphaState, al: &AlphaSample) -> Result<AlphaState> {
    // 1 - 0.999 rounds slightly above 1e-3; allow that
    if !(1.0 - al.alpha >= MIN_INVERSION_KEEP * (1.0 - 1e-9)) {
        return Err(Error::Numerical(format!(
            "cannot invert a blend step with alpha {}",
            al.alpha
        )));
    }
    Ok(invert_unchecked(state, al))
}

#[inline]
fn invert_unchecked(s: &AlphaState, al: &AlphaSample) -> AlphaState {
    // T_{i-1} = T_i / (1 - alpha), i.e. A_{i-1} = (A_i - alpha) / (1 - alpha)
    let (keep, gx, gy, gxy) = log_step(al);
    AlphaState {
        t: s.t / keep,
        lx: s.lx + gx,
        ly: s.ly + gy,
        lxy: s.lxy + gxy,
    }
}

/// Loss gradient for one splat, in the optimizer's parametrization.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GaussianGrad {
    pub d_mean: [f64; 2],
    pub d_log_scale: [f64; 2],
    pub d_rotation: f64,
    pub d_opacity_logit: f64,
    pub d_color: [f64; 3],
}

impl GaussianGrad {
    pub fn is_finite(&self) -> bool {
        self.d_mean
            .iter()
            .chain(&self.d_log_scale)
            .chain(&self.d_color)
            .all(|v| v.is_finite())
            && self.d_rotation.is_finite()
            && self.d_opacity_logit.is_finite()
    }

    pub fn is_zero(&self) -> bool {
        *self == GaussianGrad::default()
    }
}

/// Per-splat gradients, indexed like `Scene::gaussians`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneGrads {
    pub grads: Vec<GaussianGrad>,
}

impl SceneGrads {
    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(GaussianGrad::is_finite)
    }
}

/// Gradient w.r.t. render-resolution footprint parameters.
#[derive(Debug, Clone, Copy, Default)]
struct RawGrad {
    opacity_logit: f64,
    mean: [f64; 2],
    conic: [f64; 3],
    color: Rgb,
}

impl RawGrad {
    fn add(&mut self, o: &RawGrad) {
        self.opacity_logit += o.opacity_logit;
        for i in 0..2 {
            self.mean[i] += o.mean[i];
        }
        for i in 0..3 {
            self.conic[i] += o.conic[i];
            self.color[i] += o.color[i];
        }
    }
}

/// Adjoints of one pixel's four output channels.
struct PixelAdj {
    w: Rgb,
    wx: Rgb,
    wy: Rgb,
    wxy: Rgb,
}

pub fn render_backward(scene: &Scene, fwd: &GradientImage, adj: &AdjointImage) -> Result<SceneGrads> {
    render_backward_with(scene, fwd, adj, RenderOptions::default())
}

/// `options` must match the ones `fwd` was rendered with.
pub fn render_backward_with(
    scene: &Scene,
    fwd: &GradientImage,
    adj: &AdjointImage,
    options: RenderOptions,
) -> Result<SceneGrads> {
    if adj.dims() != fwd.dims() {
        return Err(Error::Dimension(format!(
            "adjoint is {}x{} but the forward image is {}x{}",
            adj.width, adj.height, fwd.width, fwd.height
        )));
    }
    if !adj.is_finite() {
        return Err(Error::Domain("adjoint image contains non-finite values".into()));
    }
    let prep = PreparedScene::new(scene, fwd.width, fwd.height, options)?;

    let per_tile: Vec<Vec<RawGrad>> = (0..prep.num_tiles())
        .into_par_iter()
        .map(|tile| backward_tile(&prep, fwd, adj, tile))
        .collect();

    // fixed tile order keeps the sums independent of the worker count
    let mut raw = vec![RawGrad::default(); prep.splats.len()];
    for (tile, local) in per_tile.iter().enumerate() {
        for (pos, &rank) in prep.tile_list(tile).iter().enumerate() {
            raw[rank as usize].add(&local[pos]);
        }
    }

    let mut grads = vec![GaussianGrad::default(); scene.gaussians.len()];
    for (rank, r) in raw.iter().enumerate() {
        let idx = prep.splats[rank].index;
        grads[idx] = to_param_grad(r, &scene.gaussians[idx], prep.scale);
    }
    Ok(SceneGrads { grads })
}

fn backward_tile(prep: &PreparedScene, fwd: &GradientImage, adj: &AdjointImage, tile: usize) -> Vec<RawGrad> {
    let list = prep.tile_list(tile);
    let mut local = vec![RawGrad::default(); list.len()];
    let [x0, x1, y0, y1] = prep.tile_rect(tile);
    let mut chain: Vec<(usize, super::forward::SplatSample)> = Vec::new();
    for py in y0..y1 {
        for px in x0..x1 {
            let idx = py * prep.width + px;
            let a = PixelAdj {
                w: adj.w[idx],
                wx: adj.wx[idx],
                wy: adj.wy[idx],
                wxy: adj.wxy[idx],
            };
            let count = fwd.contrib_count[idx] as usize;
            if count == 0 || [a.w, a.wx, a.wy, a.wxy].iter().all(|v| *v == [0.0; 3]) {
                continue;
            }
            let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);

            // replay the forward contributor list
            chain.clear();
            for (pos, &rank) in list.iter().enumerate() {
                let sample = prep.splats[rank as usize].sample(x, y);
                if prep.passes_cull(&sample) {
                    chain.push((pos, sample));
                    if chain.len() == count {
                        break;
                    }
                }
            }
            debug_assert_eq!(chain.len(), count);

            let mut state = AlphaState::from_terminal(
                fwd.transmittance[idx],
                fwd.alpha_dx[idx],
                fwd.alpha_dy[idx],
                fwd.alpha_dxdy[idx],
            );
            // R = B^_{k+1} and its derivatives; starts as the background
            let mut r: [Rgb; 4] = [prep.background, [0.0; 3], [0.0; 3], [0.0; 3]];

            for &(pos, sample) in chain.iter().rev() {
                let splat = &prep.splats[list[pos] as usize];
                let al = sample.alpha;
                let prev = invert_unchecked(&state, &al);
                let [t, tx, ty, txy] = prev.transmittance();

                let mut g_alpha = 0.0;
                let mut g_ax = 0.0;
                let mut g_ay = 0.0;
                let mut g_axy = 0.0;
                let out = &mut local[pos];
                for ch in 0..3 {
                    let c = splat.color[ch];
                    let d = c - r[0][ch];
                    let (dx, dy, dxy) = (-r[1][ch], -r[2][ch], -r[3][ch]);
                    // T * D and its spatial derivatives
                    let td = t * d;
                    let td_x = tx * d + t * dx;
                    let td_y = ty * d + t * dy;
                    let td_xy = txy * d + tx * dy + ty * dx + t * dxy;
                    g_alpha += a.w[ch] * td + a.wx[ch] * td_x + a.wy[ch] * td_y + a.wxy[ch] * td_xy;
                    g_ax += a.wx[ch] * td + a.wxy[ch] * td_y;
                    g_ay += a.wy[ch] * td + a.wxy[ch] * td_x;
                    g_axy += a.wxy[ch] * td;
                    // dI/dc_k = T alpha, and its spatial derivatives
                    out.color[ch] += a.w[ch] * t * al.alpha
                        + a.wx[ch] * (tx * al.alpha + t * al.dx)
                        + a.wy[ch] * (ty * al.alpha + t * al.dy)
                        + a.wxy[ch] * (txy * al.alpha + tx * al.dy + ty * al.dx + t * al.dxy);
                }

                if !sample.clamped {
                    chain_footprint(out, splat, &sample.exponent, &al, [g_alpha, g_ax, g_ay, g_axy], x, y);
                }

                // B^_k from B^_{k+1}
                let keep = 1.0 - al.alpha;
                for ch in 0..3 {
                    let d = splat.color[ch] - r[0][ch];
                    let (r0, r1, r2, r3) = (r[0][ch], r[1][ch], r[2][ch], r[3][ch]);
                    r[0][ch] = keep * r0 + al.alpha * splat.color[ch];
                    r[1][ch] = keep * r1 + al.dx * d;
                    r[2][ch] = keep * r2 + al.dy * d;
                    r[3][ch] = keep * r3 + al.dxy * d - al.dy * r1 - al.dx * r2;
                }
                state = prev;
            }
        }
    }
    local
}

/// Pushes adjoints of `(alpha, alpha_x, alpha_y, alpha_xy)` into opacity,
/// mean and conic. For `alpha = sigma e^G` and any footprint parameter `p`
/// with exponent derivatives `G_p, G_xp, G_yp, G_xyp`:
///
/// ```text
/// d alpha    / dp = alpha G_p
/// d alpha_x  / dp = alpha (G_p G_x + G_xp)
/// d alpha_y  / dp = alpha (G_p G_y + G_yp)
/// d alpha_xy / dp = alpha (G_p (G_x G_y + G_xy) + G_xp G_y + G_x G_yp + G_xyp)
/// ```
///
/// All four are linear in `sigma`, which gives the opacity term directly.
#[inline]
fn chain_footprint(
    out: &mut RawGrad,
    splat: &super::forward::Splat,
    e: &crate::gaussian::Exponent,
    al: &AlphaSample,
    g: [f64; 4],
    x: f64,
    y: f64,
) {
    let [ga, gax, gay, gaxy] = g;
    let alpha = al.alpha;
    let through = |gp: f64, gxp: f64, gyp: f64, gxyp: f64| -> f64 {
        alpha
            * (ga * gp
                + gax * (gp * e.gx + gxp)
                + gay * (gp * e.gy + gyp)
                + gaxy * (gp * (e.gx * e.gy + e.gxy) + gxp * e.gy + e.gx * gyp + gxyp))
    };
    let (dx, dy) = (x - splat.mean[0], y - splat.mean[1]);
    let k = &splat.conic;

    // d/dsigma = (...) / sigma, and dsigma/dlogit = sigma (1 - sigma)
    out.opacity_logit += (ga * al.alpha + gax * al.dx + gay * al.dy + gaxy * al.dxy) * (1.0 - splat.opacity);
    out.mean[0] += through(-e.gx, 2.0 * k.a, 2.0 * k.b, 0.0);
    out.mean[1] += through(-e.gy, 2.0 * k.b, 2.0 * k.c, 0.0);
    out.conic[0] += through(-dx * dx, -2.0 * dx, 0.0, 0.0);
    out.conic[1] += through(-2.0 * dx * dy, -2.0 * dy, -2.0 * dx, -2.0);
    out.conic[2] += through(-dy * dy, 0.0, -2.0 * dy, 0.0);
}

/// Maps render-space gradients onto `(mean, log_scale, rotation,
/// opacity_logit, color)` of the reference-resolution splat.
fn to_param_grad(r: &RawGrad, g: &crate::gaussian::Gaussian2D, scale: [f64; 2]) -> GaussianGrad {
    let [sx, sy] = scale;
    // render conic = reference conic scaled by 1/(sx^2), 1/(sx sy), 1/(sy^2)
    let da = r.conic[0] / (sx * sx);
    let db = r.conic[1] / (sx * sy);
    let dc = r.conic[2] / (sy * sy);

    // reference conic: a = C^2 u + S^2 v, b = C S (u - v), c = S^2 u + C^2 v
    // with u = e^{-2 l0} / 2, v = e^{-2 l1} / 2
    let (s, c) = g.rotation.sin_cos();
    let u = 0.5 * (-2.0 * g.log_scale[0]).exp();
    let v = 0.5 * (-2.0 * g.log_scale[1]).exp();
    let d_l0 = -2.0 * u * (da * c * c + db * c * s + dc * s * s);
    let d_l1 = -2.0 * v * (da * s * s - db * c * s + dc * c * c);
    let d_rot = (u - v) * (-2.0 * c * s * da + (c * c - s * s) * db + 2.0 * c * s * dc);

    let mut d_color = [0.0; 3];
    for ch in 0..3 {
        if (0.0..=1.0).contains(&g.color[ch]) {
            d_color[ch] = r.color[ch];
        }
    }
    GaussianGrad {
        d_mean: [r.mean[0] * sx, r.mean[1] * sy],
        d_log_scale: [d_l0, d_l1],
        d_rotation: d_rot,
        d_opacity_logit: r.opacity_logit,
        d_color,
    }
}
