//! Fitting a [`Scene`] to a target image, optionally rendering at reduced
//! resolution and upscaling inside the loop.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gaussian::{logit, Gaussian2D, Scene};
use crate::image::{AdjointImage, GradientImage, Image, Rgb};
use crate::metrics::{psnr, ssim, ssim_with_grad, SSIM_WINDOW};
use crate::raster::{render_backward, render_forward, SceneGrads};
use crate::spline::{fd_gradients, fd_gradients_backward, upscale_backward_to, upscale_spline_to};

/// How a reduced-resolution render is brought up to the target size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpscaleMode {
    /// Spline patches from the renderer's analytical derivatives.
    SplineAnalytic,
    /// Spline patches from finite-difference derivatives (classical bicubic).
    BicubicFd,
    None,
}

/// Per-group Adam step sizes. `mean` is in units of the longer image side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRates {
    pub mean: f64,
    pub log_scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            mean: 2e-3,
            log_scale: 5e-3,
            rotation: 1e-3,
            opacity: 5e-2,
            color: 2.5e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub iterations: usize,
    pub num_gaussians: usize,
    /// Target size divided by render size; 1 trains at full resolution.
    pub render_scale: f64,
    pub upscale_mode: UpscaleMode,
    pub learning_rates: LearningRates,
    /// Weight of the `1 - SSIM` term; the rest goes to L1.
    pub ssim_weight: f64,
    pub seed: u64,
    pub log_every: usize,
    /// Drop splats with opacity below [`PRUNE_OPACITY`] every this many iterations.
    pub prune_every: Option<usize>,
    pub background: Rgb,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            num_gaussians: 256,
            render_scale: 1.0,
            upscale_mode: UpscaleMode::SplineAnalytic,
            learning_rates: LearningRates::default(),
            ssim_weight: 0.2,
            seed: 0,
            log_every: 10,
            prune_every: None,
            background: [0.0; 3],
        }
    }
}

pub const PRUNE_OPACITY: f64 = 0.005;

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.into()));
        if self.iterations == 0 {
            return fail("iterations must be positive");
        }
        if self.num_gaussians == 0 {
            return fail("num_gaussians must be positive");
        }
        if !(self.render_scale.is_finite() && self.render_scale >= 1.0) {
            return fail("render_scale must be a finite number >= 1");
        }
        if self.render_scale > 1.0 && self.upscale_mode == UpscaleMode::None {
            return fail("render_scale > 1 needs an upscale mode");
        }
        if !(0.0..=1.0).contains(&self.ssim_weight) {
            return fail("ssim_weight must lie in [0, 1]");
        }
        if self.log_every == 0 {
            return fail("log_every must be positive");
        }
        if self.prune_every == Some(0) {
            return fail("prune_every must be positive");
        }
        let lr = &self.learning_rates;
        if ![lr.mean, lr.log_scale, lr.rotation, lr.opacity, lr.color]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
        {
            return fail("learning rates must be finite and non-negative");
        }
        if !self.background.iter().all(|v| v.is_finite()) {
            return fail("background must be finite");
        }
        Ok(())
    }
}

/// One logged iteration. Times cover every iteration since the previous row.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRow {
    pub iter: usize,
    pub loss: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub t_forward_ms: f64,
    pub t_upscale_ms: f64,
    pub t_backward_ms: f64,
    pub t_opt_ms: f64,
}

impl FitRow {
    pub const CSV_HEADER: &'static str = "iter,loss,psnr,ssim,t_forward_ms,t_upscale_ms,t_backward_ms,t_opt_ms";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{:.3},{:.3},{:.3},{:.3}",
            self.iter,
            self.loss,
            self.psnr,
            self.ssim,
            self.t_forward_ms,
            self.t_upscale_ms,
            self.t_backward_ms,
            self.t_opt_ms
        )
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub rows: Vec<FitRow>,
    pub scene: Scene,
    pub render_size: (usize, usize),
    /// Metrics of the final scene through the same render/upscale pipeline.
    pub final_loss: f64,
    pub final_psnr: f64,
    pub final_ssim: f64,
    /// Wall time of the whole optimization loop.
    pub total_ms: f64,
}

/// `(1 - λ) L1 + λ (1 - SSIM)` and its gradient with respect to `pred`.
pub fn loss(pred: &Image, target: &Image, ssim_weight: f64) -> Result<(f64, Image)> {
    let (value, _, adj) = loss_terms(pred, target, ssim_weight)?;
    Ok((value, adj))
}

fn loss_terms(pred: &Image, target: &Image, lambda: f64) -> Result<(f64, Option<f64>, Image)> {
    pred.ensure_same_dims(target)?;
    if pred.is_empty() {
        return Err(Error::Dimension("cannot compute a loss on an empty image".into()));
    }
    let n = (3 * pred.pixels.len()) as f64;
    let l1_weight = (1.0 - lambda) / n;
    let mut l1 = 0.0;
    let mut adj = Image::new(pred.width, pred.height);
    for ((p, t), a) in pred.pixels.iter().zip(&target.pixels).zip(&mut adj.pixels) {
        for ch in 0..3 {
            let d = p[ch] - t[ch];
            l1 += d.abs();
            a[ch] = if d > 0.0 {
                l1_weight
            } else if d < 0.0 {
                -l1_weight
            } else {
                0.0
            };
        }
    }
    let mut value = (1.0 - lambda) * l1 / n;
    let mut s = None;
    if lambda > 0.0 {
        let (sv, grad) = ssim_with_grad(pred, target)?;
        value += lambda * (1.0 - sv);
        for (a, g) in adj.pixels.iter_mut().zip(&grad.pixels) {
            for ch in 0..3 {
                a[ch] -= lambda * g[ch];
            }
        }
        s = Some(sv);
    }
    Ok((value, s, adj))
}

/// Random initial scene: uniform means, isotropic splats each covering about
/// `area / n` pixels at one sigma, half opacity, colors read from `target`.
pub fn init_scene(target: &Image, n: usize, seed: u64) -> Scene {
    let (w, h) = target.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = (w as f64 * h as f64 / (n.max(1) as f64 * std::f64::consts::PI)).sqrt();
    let mut scene = Scene::new((w, h), [0.0; 3]);
    scene.gaussians = (0..n)
        .map(|_| {
            let mean = [rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64)];
            let px = (mean[0] as usize).min(w - 1);
            let py = (mean[1] as usize).min(h - 1);
            Gaussian2D {
                mean,
                log_scale: [sigma.ln(); 2],
                rotation: 0.0,
                opacity_logit: logit(0.5),
                color: target.get(px, py),
                depth: rng.gen(),
            }
        })
        .collect();
    scene
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update; `lr` holds the step size of each entry.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: &[f64]) -> Result<()> {
    let n = params.len();
    if grads.len() != n || lr.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Dimension(format!(
            "adam: {n} params, {} grads, {} rates, {} moments",
            grads.len(),
            lr.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powf(state.t as f64);
    let bc2 = 1.0 - ADAM_BETA2.powf(state.t as f64);
    for i in 0..n {
        let g = grads[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr[i] * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// Optimizable values per splat: mean (2), log_scale (2), rotation,
/// opacity logit, color (3). Depth stays fixed.
const PARAMS_PER_SPLAT: usize = 9;

fn pack_params(scene: &Scene) -> Vec<f64> {
    let mut out = Vec::with_capacity(scene.gaussians.len() * PARAMS_PER_SPLAT);
    for g in &scene.gaussians {
        out.extend_from_slice(&g.mean);
        out.extend_from_slice(&g.log_scale);
        out.push(g.rotation);
        out.push(g.opacity_logit);
        out.extend_from_slice(&g.color);
    }
    out
}

fn unpack_params(scene: &mut Scene, params: &[f64]) {
    for (g, p) in scene.gaussians.iter_mut().zip(params.chunks_exact(PARAMS_PER_SPLAT)) {
        g.mean = [p[0], p[1]];
        g.log_scale = [p[2], p[3]];
        g.rotation = p[4];
        g.opacity_logit = p[5];
        g.color = [p[6], p[7], p[8]];
    }
}

fn pack_grads(grads: &SceneGrads) -> Vec<f64> {
    let mut out = Vec::with_capacity(grads.grads.len() * PARAMS_PER_SPLAT);
    for g in &grads.grads {
        out.extend_from_slice(&g.d_mean);
        out.extend_from_slice(&g.d_log_scale);
        out.push(g.d_rotation);
        out.push(g.d_opacity_logit);
        out.extend_from_slice(&g.d_color);
    }
    out
}

fn step_sizes(lr: &LearningRates, n: usize, extent: f64) -> Vec<f64> {
    let per = [
        lr.mean * extent,
        lr.mean * extent,
        lr.log_scale,
        lr.log_scale,
        lr.rotation,
        lr.opacity,
        lr.color,
        lr.color,
        lr.color,
    ];
    per.iter().copied().cycle().take(n * PARAMS_PER_SPLAT).collect()
}

/// Render size for a target and a render scale, at least one pixel per axis.
pub fn render_size(target: (usize, usize), render_scale: f64) -> (usize, usize) {
    let f = |v: usize| ((v as f64 / render_scale).round() as usize).clamp(1, v);
    (f(target.0), f(target.1))
}

/// Render followed by the configured upscale to the target size.
struct Pipeline {
    mode: UpscaleMode,
    render: (usize, usize),
    target: (usize, usize),
}

impl Pipeline {
    fn upscales(&self) -> bool {
        self.render != self.target
    }

    fn render(&self, scene: &Scene) -> Result<GradientImage> {
        render_forward(scene, self.render.0, self.render.1)
    }

    fn upscale(&self, fwd: &GradientImage) -> Result<Image> {
        if !self.upscales() {
            return Ok(fwd.color_image());
        }
        let (w, h) = self.target;
        match self.mode {
            UpscaleMode::SplineAnalytic => upscale_spline_to(fwd, w, h),
            UpscaleMode::BicubicFd => upscale_spline_to(&fd_gradients(&fwd.color_image())?, w, h),
            UpscaleMode::None => Err(Error::Config(
                "render size differs from target without an upscale mode".into(),
            )),
        }
    }

    fn predict(&self, scene: &Scene) -> Result<Image> {
        self.upscale(&self.render(scene)?)
    }

    /// Carries `dL/dpred` back to the render's four channels. The output
    /// clamp of the upscaler is passed straight through.
    fn upscale_backward(&self, adj: &Image) -> Result<AdjointImage> {
        if !self.upscales() {
            return Ok(AdjointImage::from_value(adj));
        }
        let (w, h) = self.render;
        let channels = upscale_backward_to(w, h, adj)?;
        match self.mode {
            UpscaleMode::SplineAnalytic => Ok(channels),
            _ => Ok(AdjointImage::from_value(&fd_gradients_backward(&channels)?)),
        }
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn report_ssim(pred: &Image, target: &Image, from_loss: Option<f64>) -> Result<f64> {
    match from_loss {
        Some(s) => Ok(s),
        None if target.width >= SSIM_WINDOW && target.height >= SSIM_WINDOW => ssim(pred, target),
        None => Ok(f64::NAN),
    }
}

/// Fits a freshly initialized scene to `target`.
pub fn fit(target: &Image, cfg: &FitConfig) -> Result<FitReport> {
    let mut scene = init_scene(target, cfg.num_gaussians, cfg.seed);
    scene.background = cfg.background;
    fit_scene(target, scene, cfg)
}

/// Optimizes `scene` (whose reference resolution must equal the target size).
pub fn fit_scene(target: &Image, mut scene: Scene, cfg: &FitConfig) -> Result<FitReport> {
    cfg.validate()?;
    if target.is_empty() {
        return Err(Error::Dimension("target image is empty".into()));
    }
    if scene.reference_resolution != target.dims() {
        return Err(Error::Dimension(format!(
            "scene reference resolution {:?} differs from target {:?}",
            scene.reference_resolution,
            target.dims()
        )));
    }
    if cfg.ssim_weight > 0.0 && (target.width < SSIM_WINDOW || target.height < SSIM_WINDOW) {
        return Err(Error::Config(format!(
            "SSIM loss needs a target of at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels"
        )));
    }
    scene.validate()?;

    let pipeline = Pipeline {
        mode: cfg.upscale_mode,
        render: render_size(target.dims(), cfg.render_scale),
        target: target.dims(),
    };
    let extent = target.width.max(target.height) as f64;
    let mut params = pack_params(&scene);
    let mut lrs = step_sizes(&cfg.learning_rates, scene.gaussians.len(), extent);
    let mut adam = AdamState::new(params.len());
    let mut rows = Vec::new();
    let mut times = [0.0f64; 4];
    let start = Instant::now();

    for iter in 0..cfg.iterations {
        let t = Instant::now();
        let fwd = pipeline.render(&scene)?;
        times[0] += ms_since(t);

        let t = Instant::now();
        let pred = pipeline.upscale(&fwd)?;
        times[1] += ms_since(t);

        let t = Instant::now();
        let (value, s, adj_pred) = loss_terms(&pred, target, cfg.ssim_weight)?;
        let adj = pipeline.upscale_backward(&adj_pred)?;
        let grads = render_backward(&scene, &fwd, &adj)?;
        times[2] += ms_since(t);
        if !value.is_finite() || !grads.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss or gradient at iteration {iter}"
            )));
        }

        let last = iter + 1 == cfg.iterations;
        if iter % cfg.log_every == 0 || last {
            rows.push(FitRow {
                iter,
                loss: value,
                psnr: psnr(&pred, target)?,
                ssim: report_ssim(&pred, target, s)?,
                t_forward_ms: times[0],
                t_upscale_ms: times[1],
                t_backward_ms: times[2],
                t_opt_ms: times[3],
            });
            times = [0.0; 4];
        }

        let t = Instant::now();
        adam_step(&mut params, &pack_grads(&grads), &mut adam, &lrs)?;
        unpack_params(&mut scene, &params);
        if let Some(every) = cfg.prune_every {
            if (iter + 1) % every == 0 && !last {
                prune(&mut scene, &mut params, &mut adam, &mut lrs);
            }
        }
        times[3] += ms_since(t);
    }
    let total_ms = ms_since(start);

    let pred = pipeline.predict(&scene)?;
    let (final_loss, s, _) = loss_terms(&pred, target, cfg.ssim_weight)?;
    Ok(FitReport {
        rows,
        render_size: pipeline.render,
        final_loss,
        final_psnr: psnr(&pred, target)?,
        final_ssim: report_ssim(&pred, target, s)?,
        scene,
        total_ms,
    })
}

/// Removes nearly transparent splats together with their optimizer state.
fn prune(scene: &mut Scene, params: &mut Vec<f64>, adam: &mut AdamState, lrs: &mut Vec<f64>) {
    let keep: Vec<bool> = scene.gaussians.iter().map(|g| g.opacity() >= PRUNE_OPACITY).collect();
    if keep.iter().all(|&k| k) {
        return;
    }
    let filter = |v: &mut Vec<f64>| {
        *v = v
            .chunks_exact(PARAMS_PER_SPLAT)
            .zip(&keep)
            .filter(|(_, &k)| k)
            .flat_map(|(c, _)| c.iter().copied())
            .collect();
    };
    filter(params);
    filter(&mut adam.m);
    filter(&mut adam.v);
    filter(lrs);
    let mut k = keep.iter();
    scene.gaussians.retain(|_| *k.next().unwrap());
}
