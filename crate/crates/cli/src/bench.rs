//! Timing and quality benchmarks over a procedural scene and the image corpus.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splineup::baselines::{upscale_bilinear, upscale_lanczos, upscale_nearest, LANCZOS_LOBES};
use splineup::fit::{fit, FitConfig, UpscaleMode};
use splineup::gaussian::logit;
use splineup::metrics::{psnr, ssim};
use splineup::spline::{upscale_bicubic_fd, upscale_spline};
use splineup::{render_forward, Gaussian2D, Image, Scene};

use crate::error::{CliError, Result};
use crate::png_io;

pub const FACTORS: [usize; 4] = [2, 3, 4, 8];
pub const BENCH_SIZE: usize = 256;
pub const CORPUS: [&str; 3] = ["astronaut.png", "coffee.png", "chelsea.png"];

pub fn default_corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn load_corpus(dir: &Path) -> Result<Vec<(String, Image)>> {
    CORPUS
        .iter()
        .map(|name| {
            let path = dir.join(name);
            if !path.is_file() {
                return Err(CliError::io(
                    &path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "corpus image missing"),
                ));
            }
            Ok((name.trim_end_matches(".png").to_string(), png_io::load_linear(&path)?))
        })
        .collect()
}

/// Deterministic scene with a mix of large soft and small sharp splats.
pub fn bench_scene() -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let size = BENCH_SIZE as f64;
    let mut scene = Scene::new((BENCH_SIZE, BENCH_SIZE), [0.05, 0.05, 0.08]);
    scene.gaussians = (0..1200)
        .map(|i| {
            let big = i % 6 == 0;
            let base = if big {
                rng.gen_range(12.0..30.0)
            } else {
                rng.gen_range(1.5..6.0)
            };
            let aspect: f64 = rng.gen_range(0.4..1.0);
            Gaussian2D {
                mean: [rng.gen_range(0.0..size), rng.gen_range(0.0..size)],
                log_scale: [f64::ln(base), f64::ln(base * aspect)],
                rotation: rng.gen_range(0.0..std::f64::consts::PI),
                opacity_logit: logit(rng.gen_range(0.3..0.95)),
                color: [rng.gen(), rng.gen(), rng.gen()],
                depth: rng.gen(),
            }
        })
        .collect();
    scene
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub suite: &'static str,
    pub subject: String,
    pub method: String,
    pub factor: usize,
    pub time_ms: f64,
    pub psnr: f64,
    pub ssim: f64,
}

pub const CSV_HEADER: &str = "suite,subject,method,factor,time_ms,psnr,ssim";

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:.4},{:.4},{:.6}",
            r.suite, r.subject, r.method, r.factor, r.time_ms, r.psnr, r.ssim
        )
        .unwrap();
    }
    out
}

/// Median wall time of `repeats` runs, plus the last result.
fn timed<T>(repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<(f64, T)> {
    let mut times = Vec::with_capacity(repeats);
    let mut last = None;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        last = Some(f()?);
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    Ok((times[times.len() / 2], last.unwrap()))
}

fn quality(pred: &Image, truth: &Image) -> Result<(f64, f64)> {
    Ok((psnr(pred, truth)?, ssim(pred, truth)?))
}

/// Area-average downsampling by an integer factor, dropping leftover pixels.
pub fn downsample_box(img: &Image, factor: usize) -> Image {
    let (w, h) = (img.width / factor, img.height / factor);
    let inv = 1.0 / (factor * factor) as f64;
    Image::from_fn(w, h, |x, y| {
        let mut acc = [0.0; 3];
        for j in 0..factor {
            for i in 0..factor {
                let p = img.get(x * factor + i, y * factor + j);
                for ch in 0..3 {
                    acc[ch] += p[ch] * inv;
                }
            }
        }
        acc
    })
}

pub fn crop(img: &Image, w: usize, h: usize) -> Image {
    Image::from_fn(w, h, |x, y| img.get(x, y))
}

type ClassicUpscaler = fn(&Image, f64) -> splineup::Result<Image>;

fn classic_methods() -> [(&'static str, ClassicUpscaler); 4] {
    [
        ("bicubic-fd", upscale_bicubic_fd),
        ("bilinear", upscale_bilinear),
        ("nearest", upscale_nearest),
        ("lanczos", |img, f| upscale_lanczos(img, f, LANCZOS_LOBES)),
    ]
}

/// Render and upscale timings on the bench scene, and classical upscalers on
/// box-downsampled corpus images.
pub fn upscale_suite(corpus: &[(String, Image)], repeats: usize) -> Result<Vec<BenchRow>> {
    let scene = bench_scene();
    let mut rows = Vec::new();
    let (t_full, full) = timed(repeats, || Ok(render_forward(&scene, BENCH_SIZE, BENCH_SIZE)?))?;
    let truth = full.color_image();
    rows.push(BenchRow {
        suite: "upscale",
        subject: "bench_scene".into(),
        method: "render_full".into(),
        factor: 1,
        time_ms: t_full,
        psnr: psnr(&truth, &truth)?,
        ssim: 1.0,
    });
    for factor in FACTORS {
        let low_size = BENCH_SIZE / factor;
        let f = BENCH_SIZE as f64 / low_size as f64;
        let (t_low, low) = timed(repeats, || Ok(render_forward(&scene, low_size, low_size)?))?;
        let out_size = (low_size as f64 * f).round() as usize;
        let truth = crop(&truth, out_size, out_size);
        let low_color = low.color_image();
        let (q_low_p, q_low_s) = {
            let up = upscale_nearest(&low_color, f)?;
            quality(&up, &truth)?
        };
        rows.push(BenchRow {
            suite: "upscale",
            subject: "bench_scene".into(),
            method: "render_low".into(),
            factor,
            time_ms: t_low,
            psnr: q_low_p,
            ssim: q_low_s,
        });
        let (t, up) = timed(repeats, || Ok(upscale_spline(&low, f)?))?;
        let (p, s) = quality(&up, &truth)?;
        rows.push(row("bench_scene", "spline-analytic", factor, t, p, s));
        for (name, method) in classic_methods() {
            let (t, up) = timed(repeats, || Ok(method(&low_color, f)?))?;
            let (p, s) = quality(&up, &truth)?;
            rows.push(row("bench_scene", name, factor, t, p, s));
        }
    }
    for (subject, img) in corpus {
        for factor in FACTORS {
            let low = downsample_box(img, factor);
            let truth = crop(img, low.width * factor, low.height * factor);
            for (name, method) in classic_methods() {
                let (t, up) = timed(repeats, || Ok(method(&low, factor as f64)?))?;
                let (p, s) = quality(&up, &truth)?;
                rows.push(row(subject, name, factor, t, p, s));
            }
        }
    }
    Ok(rows)
}

fn row(subject: &str, method: &str, factor: usize, time_ms: f64, psnr: f64, ssim: f64) -> BenchRow {
    BenchRow {
        suite: "upscale",
        subject: subject.into(),
        method: method.into(),
        factor,
        time_ms,
        psnr,
        ssim,
    }
}

/// Short fits of every corpus image with upscaling in the loop; `time_ms` is
/// the mean wall time per iteration.
pub fn train_suite(corpus: &[(String, Image)], iterations: usize, num_gaussians: usize) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for (subject, img) in corpus {
        for factor in FACTORS {
            for (name, mode) in [
                ("spline-analytic", UpscaleMode::SplineAnalytic),
                ("bicubic-fd", UpscaleMode::BicubicFd),
            ] {
                let cfg = FitConfig {
                    iterations,
                    num_gaussians,
                    render_scale: factor as f64,
                    upscale_mode: mode,
                    log_every: iterations,
                    ..FitConfig::default()
                };
                let report = fit(img, &cfg)?;
                rows.push(BenchRow {
                    suite: "train",
                    subject: subject.clone(),
                    method: name.into(),
                    factor,
                    time_ms: report.total_ms / iterations as f64,
                    psnr: report.final_psnr,
                    ssim: report.final_ssim,
                });
            }
        }
    }
    Ok(rows)
}
