use rayon::prelude::*;

use super::{ALPHA_CULL, ALPHA_MAX, STOP_TRANSMITTANCE, TILE_SIZE};
use crate::error::{Error, Result};
use crate::gaussian::{alpha_from_exponent, conic_from_params, exponent, AlphaSample, Conic, Exponent, Scene};
use crate::image::{GradientImage, Rgb};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    /// A splat is skipped at a pixel when its (clamped) alpha is below this.
    pub alpha_cull: f64,
    /// Blending stops once the remaining transmittance `1 - A` drops below this.
    pub stop_transmittance: f64,
    /// Bin splats into 16x16 tiles. The untiled path is the reference.
    pub tiled: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            alpha_cull: ALPHA_CULL,
            stop_transmittance: STOP_TRANSMITTANCE,
            tiled: true,
        }
    }
}

impl RenderOptions {
    /// No culling and no early termination: the rendered image is a smooth
    /// function of every parameter.
    pub fn exact() -> Self {
        Self {
            alpha_cull: 0.0,
            stop_transmittance: 0.0,
            tiled: true,
        }
    }
}

/// A splat mapped to render resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat {
    /// Index into `Scene::gaussians`.
    pub index: usize,
    pub mean: [f64; 2],
    pub conic: Conic,
    pub opacity: f64,
    pub color: Rgb,
    /// Inclusive pixel bounds `[x0, x1, y0, y1]` outside which the splat is
    /// always culled; `None` if it never reaches the cull threshold.
    pub bounds: Option<[usize; 4]>,
}

/// Alpha of a splat at a point after the `ALPHA_MAX` clamp. A clamped sample
/// has zero spatial derivatives.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SplatSample {
    pub alpha: AlphaSample,
    pub exponent: Exponent,
    pub clamped: bool,
}

impl Splat {
    #[inline]
    pub(crate) fn sample(&self, x: f64, y: f64) -> SplatSample {
        let exponent = exponent(&self.conic, x - self.mean[0], y - self.mean[1]);
        let alpha = alpha_from_exponent(self.opacity, &exponent);
        if alpha.alpha > ALPHA_MAX {
            SplatSample {
                alpha: AlphaSample {
                    alpha: ALPHA_MAX,
                    ..Default::default()
                },
                exponent,
                clamped: true,
            }
        } else {
            SplatSample {
                alpha,
                exponent,
                clamped: false,
            }
        }
    }
}

/// Stable ascending sort of splat indices by depth.
pub fn sort_by_depth(scene: &Scene) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scene.gaussians.len()).collect();
    order.sort_by(|&i, &j| {
        scene.gaussians[i]
            .depth
            .partial_cmp(&scene.gaussians[j].depth)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order
}

/// Scene mapped to one render resolution, depth sorted and binned into tiles.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub width: usize,
    pub height: usize,
    pub background: Rgb,
    /// Splats in front-to-back order.
    pub splats: Vec<Splat>,
    /// Render-resolution pixels per reference pixel, per axis.
    pub scale: [f64; 2],
    pub options: RenderOptions,
    tiles_x: usize,
    /// Per tile, positions into `splats` (ascending, so still depth ordered).
    tiles: Vec<Vec<u32>>,
}

/// Running front-to-back blend state: premultiplied color `B`, accumulated
/// alpha `A`, and their x, y and xy derivatives. `t` is the transmittance
/// `1 - A` kept as a running product.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BlendState {
    pub b: [Rgb; 4],
    pub a: [f64; 4],
    pub t: f64,
    pub count: u32,
}

impl Default for BlendState {
    fn default() -> Self {
        Self {
            b: [[0.0; 3]; 4],
            a: [0.0; 4],
            t: 1.0,
            count: 0,
        }
    }
}

impl BlendState {
    /// One step of the front-to-back recurrence; uses the pre-step `A_{i-1}`.
    #[inline]
    pub(crate) fn push(&mut self, al: &AlphaSample, c: &Rgb) {
        let [a, ax, ay, axy] = self.a;
        let t = 1.0 - a;
        let k0 = t * al.alpha;
        let kx = t * al.dx - ax * al.alpha;
        let ky = t * al.dy - ay * al.alpha;
        let kxy = t * al.dxy - ay * al.dx - axy * al.alpha - ax * al.dy;
        for ch in 0..3 {
            self.b[0][ch] += c[ch] * k0;
            self.b[1][ch] += c[ch] * kx;
            self.b[2][ch] += c[ch] * ky;
            self.b[3][ch] += c[ch] * kxy;
        }
        let keep = 1.0 - al.alpha;
        self.a = [
            a + al.alpha * t,
            ax * keep + t * al.dx,
            ay * keep + t * al.dy,
            axy * keep + t * al.dxy - ax * al.dy - ay * al.dx,
        ];
        self.t *= keep;
        self.count += 1;
    }

    /// Composites the background behind the blended splats.
    pub(crate) fn finish(&self, bg: &Rgb) -> [Rgb; 4] {
        let [a, ax, ay, axy] = self.a;
        let mut out = self.b;
        for ch in 0..3 {
            out[0][ch] += (1.0 - a) * bg[ch];
            out[1][ch] -= ax * bg[ch];
            out[2][ch] -= ay * bg[ch];
            out[3][ch] -= axy * bg[ch];
        }
        out
    }
}

/// Value and spatial derivatives of the rendered color at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointSample {
    pub color: Rgb,
    pub d_dx: Rgb,
    pub d_dy: Rgb,
    pub d_dxdy: Rgb,
}

impl PreparedScene {
    pub fn new(scene: &Scene, width: usize, height: usize, options: RenderOptions) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "render size must be positive, got {width}x{height}"
            )));
        }
        scene.validate()?;
        let (rw, rh) = scene.reference_resolution;
        let scale = [width as f64 / rw as f64, height as f64 / rh as f64];
        let splats: Vec<Splat> = sort_by_depth(scene)
            .into_iter()
            .map(|index| {
                let g = &scene.gaussians[index];
                let k = conic_from_params(g.log_scale, g.rotation);
                let conic = Conic {
                    a: k.a / (scale[0] * scale[0]),
                    b: k.b / (scale[0] * scale[1]),
                    c: k.c / (scale[1] * scale[1]),
                };
                // det of the reference conic without cancellation
                let det_ref = 0.25 * (-2.0 * (g.log_scale[0] + g.log_scale[1])).exp();
                let det = det_ref / (scale[0] * scale[0] * scale[1] * scale[1]);
                let mut s = Splat {
                    index,
                    mean: [g.mean[0] * scale[0], g.mean[1] * scale[1]],
                    conic,
                    opacity: g.opacity(),
                    color: g.color.map(|v| v.clamp(0.0, 1.0)),
                    bounds: None,
                };
                s.bounds = splat_bounds(&s, det, width, height, options.alpha_cull);
                s
            })
            .collect();

        let tiles_x = width.div_ceil(TILE_SIZE);
        let tiles_y = height.div_ceil(TILE_SIZE);
        let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
        for (rank, s) in splats.iter().enumerate() {
            if let Some([x0, x1, y0, y1]) = s.bounds {
                for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
                    for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                        tiles[ty * tiles_x + tx].push(rank as u32);
                    }
                }
            }
        }
        Ok(Self {
            width,
            height,
            background: scene.background,
            splats,
            scale,
            options,
            tiles_x,
            tiles,
        })
    }

    pub fn num_tiles(&self) -> usize {
        self.tiles.len()
    }

    /// Pixel rectangle `[x0, x1) x [y0, y1)` of a tile.
    pub(crate) fn tile_rect(&self, tile: usize) -> [usize; 4] {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        [
            tx * TILE_SIZE,
            ((tx + 1) * TILE_SIZE).min(self.width),
            ty * TILE_SIZE,
            ((ty + 1) * TILE_SIZE).min(self.height),
        ]
    }

    pub(crate) fn tile_list(&self, tile: usize) -> &[u32] {
        &self.tiles[tile]
    }

    #[inline]
    pub(crate) fn passes_cull(&self, sample: &SplatSample) -> bool {
        sample.alpha.alpha >= self.options.alpha_cull
    }

    /// Blends the candidates at a pixel center, applying culling and early
    /// termination.
    #[inline]
    pub(crate) fn blend_pixel(&self, candidates: impl Iterator<Item = usize>, px: usize, py: usize) -> BlendState {
        let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
        let mut st = BlendState::default();
        for rank in candidates {
            let s = &self.splats[rank];
            let sample = s.sample(x, y);
            if !self.passes_cull(&sample) {
                continue;
            }
            st.push(&sample.alpha, &s.color);
            if 1.0 - st.a[0] < self.options.stop_transmittance {
                break;
            }
        }
        st
    }

    /// Depth-ordered positions (into `splats`) of the splats blended at a pixel.
    pub fn contributors(&self, px: usize, py: usize) -> Vec<usize> {
        let tile = (py / TILE_SIZE) * self.tiles_x + px / TILE_SIZE;
        let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
        let mut out = Vec::new();
        let mut st = BlendState::default();
        for &rank in &self.tiles[tile] {
            let s = &self.splats[rank as usize];
            let sample = s.sample(x, y);
            if !self.passes_cull(&sample) {
                continue;
            }
            out.push(rank as usize);
            st.push(&sample.alpha, &s.color);
            if 1.0 - st.a[0] < self.options.stop_transmittance {
                break;
            }
        }
        out
    }

    /// Evaluates the blend of a fixed, depth-ordered splat list at an
    /// arbitrary continuous point, with no culling or termination. With the
    /// contributor list of a pixel this is the smooth function whose
    /// derivatives the rasterizer reports at that pixel.
    pub fn shade_at(&self, x: f64, y: f64, ranks: &[usize]) -> PointSample {
        let mut st = BlendState::default();
        for &rank in ranks {
            let s = &self.splats[rank];
            st.push(&s.sample(x, y).alpha, &s.color);
        }
        let [color, d_dx, d_dy, d_dxdy] = st.finish(&self.background);
        PointSample {
            color,
            d_dx,
            d_dy,
            d_dxdy,
        }
    }

    pub fn render(&self) -> GradientImage {
        let mut out = GradientImage::zeros(self.width, self.height);
        if self.options.tiled {
            let per_tile: Vec<Vec<(usize, BlendState)>> = (0..self.num_tiles())
                .into_par_iter()
                .map(|tile| {
                    let [x0, x1, y0, y1] = self.tile_rect(tile);
                    let list = &self.tiles[tile];
                    let mut res = Vec::with_capacity((x1 - x0) * (y1 - y0));
                    for py in y0..y1 {
                        for px in x0..x1 {
                            let st = self.blend_pixel(list.iter().map(|&r| r as usize), px, py);
                            res.push((py * self.width + px, st));
                        }
                    }
                    res
                })
                .collect();
            for (idx, st) in per_tile.into_iter().flatten() {
                self.store(&mut out, idx, &st);
            }
        } else {
            let rows: Vec<Vec<BlendState>> = (0..self.height)
                .into_par_iter()
                .map(|py| {
                    (0..self.width)
                        .map(|px| self.blend_pixel(0..self.splats.len(), px, py))
                        .collect()
                })
                .collect();
            for (py, row) in rows.into_iter().enumerate() {
                for (px, st) in row.into_iter().enumerate() {
                    self.store(&mut out, py * self.width + px, &st);
                }
            }
        }
        out
    }

    fn store(&self, out: &mut GradientImage, idx: usize, st: &BlendState) {
        let [c, dx, dy, dxy] = st.finish(&self.background);
        out.color[idx] = c;
        out.d_dx[idx] = dx;
        out.d_dy[idx] = dy;
        out.d_dxdy[idx] = dxy;
        out.alpha[idx] = st.a[0];
        out.alpha_dx[idx] = st.a[1];
        out.alpha_dy[idx] = st.a[2];
        out.alpha_dxdy[idx] = st.a[3];
        out.transmittance[idx] = st.t;
        out.contrib_count[idx] = st.count;
    }
}

/// Pixel box containing every pixel center where the splat can reach
/// `alpha_cull`: the ellipse `quad(d) <= ln(opacity / alpha_cull)`, padded by
/// one pixel.
fn splat_bounds(s: &Splat, det: f64, width: usize, height: usize, alpha_cull: f64) -> Option<[usize; 4]> {
    let full = Some([0, width - 1, 0, height - 1]);
    if alpha_cull <= 0.0 {
        return full;
    }
    if s.opacity.min(ALPHA_MAX) < alpha_cull {
        return None;
    }
    let level = (s.opacity / alpha_cull).ln().max(0.0);
    let ex = (level * s.conic.c / det).sqrt();
    let ey = (level * s.conic.a / det).sqrt();
    if !(ex.is_finite() && ey.is_finite()) {
        return full;
    }
    let lo_x = (s.mean[0] - ex - 0.5).floor() - 1.0;
    let hi_x = (s.mean[0] + ex - 0.5).ceil() + 1.0;
    let lo_y = (s.mean[1] - ey - 0.5).floor() - 1.0;
    let hi_y = (s.mean[1] + ey - 0.5).ceil() + 1.0;
    if hi_x < 0.0 || hi_y < 0.0 || lo_x > (width - 1) as f64 || lo_y > (height - 1) as f64 {
        return None;
    }
    let clamp = |v: f64, max: usize| v.max(0.0).min(max as f64) as usize;
    Some([
        clamp(lo_x, width - 1),
        clamp(hi_x, width - 1),
        clamp(lo_y, height - 1),
        clamp(hi_y, height - 1),
    ])
}

pub fn render_forward(scene: &Scene, out_width: usize, out_height: usize) -> Result<GradientImage> {
    render_forward_with(scene, out_width, out_height, RenderOptions::default())
}

pub fn render_forward_with(
    scene: &Scene,
    out_width: usize,
    out_height: usize,
    options: RenderOptions,
) -> Result<GradientImage> {
    Ok(PreparedScene::new(scene, out_width, out_height, options)?.render())
}
