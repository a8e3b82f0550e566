//! Command implementations and their arguments.

use std::fs;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use splineup::baselines::{upscale_bilinear, upscale_lanczos, upscale_nearest, LANCZOS_LOBES};
use splineup::fit::{fit, FitConfig, FitRow, LearningRates, UpscaleMode};
use splineup::metrics::{psnr, ssim};
use splineup::spline::{upscale_bicubic_fd, upscale_spline};
use splineup::{render_forward, Image};

use crate::bench;
use crate::demo1d;
use crate::dump;
use crate::error::{CliError, Result};
use crate::png_io;
use crate::scene_file;

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Scene JSON file.
    pub scene: PathBuf,
    /// Output width; defaults to the scene's reference width.
    #[arg(long)]
    pub width: Option<usize>,
    /// Output height; defaults to the scene's reference height.
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the color and derivative planes as a GIMG dump.
    #[arg(long)]
    pub dump_gradients: Option<PathBuf>,
}

pub fn render(args: &RenderArgs) -> Result<()> {
    let scene = scene_file::load_scene(&args.scene)?;
    let (rw, rh) = scene.reference_resolution;
    let img = render_forward(&scene, args.width.unwrap_or(rw), args.height.unwrap_or(rh))?;
    png_io::save_linear(&args.out, &img.color_image())?;
    if let Some(path) = &args.dump_gradients {
        dump::save(path, &img)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum UpscaleMethod {
    SplineAnalytic,
    BicubicFd,
    Bilinear,
    Nearest,
    Lanczos,
}

#[derive(Debug, Args)]
pub struct UpscaleArgs {
    /// Input PNG.
    #[arg(long = "in", conflicts_with = "in_grad", required_unless_present = "in_grad")]
    pub input: Option<PathBuf>,
    /// Input gradient dump (needed by spline-analytic).
    #[arg(long)]
    pub in_grad: Option<PathBuf>,
    #[arg(long)]
    pub factor: f64,
    #[arg(long, value_enum)]
    pub mode: UpscaleMethod,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn upscale(args: &UpscaleArgs) -> Result<()> {
    let out = match (&args.input, &args.in_grad) {
        (_, Some(path)) => {
            let grad = dump::load(path)?;
            match args.mode {
                UpscaleMethod::SplineAnalytic => upscale_spline(&grad, args.factor)?,
                mode => upscale_classic(&grad.color_image(), args.factor, mode)?,
            }
        }
        (Some(path), None) => {
            if args.mode == UpscaleMethod::SplineAnalytic {
                return Err(CliError::Invalid(
                    "spline-analytic needs analytical derivatives: pass --in-grad with a gradient dump".into(),
                ));
            }
            upscale_classic(&png_io::load_linear(path)?, args.factor, args.mode)?
        }
        (None, None) => return Err(CliError::Invalid("pass --in or --in-grad".into())),
    };
    png_io::save_linear(&args.out, &out)
}

fn upscale_classic(img: &Image, factor: f64, mode: UpscaleMethod) -> Result<Image> {
    Ok(match mode {
        UpscaleMethod::BicubicFd => upscale_bicubic_fd(img, factor)?,
        UpscaleMethod::Bilinear => upscale_bilinear(img, factor)?,
        UpscaleMethod::Nearest => upscale_nearest(img, factor)?,
        UpscaleMethod::Lanczos => upscale_lanczos(img, factor, LANCZOS_LOBES)?,
        UpscaleMethod::SplineAnalytic => unreachable!("handled by the caller"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitMode {
    SplineAnalytic,
    BicubicFd,
    None,
}

impl From<FitMode> for UpscaleMode {
    fn from(m: FitMode) -> Self {
        match m {
            FitMode::SplineAnalytic => UpscaleMode::SplineAnalytic,
            FitMode::BicubicFd => UpscaleMode::BicubicFd,
            FitMode::None => UpscaleMode::None,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub target: PathBuf,
    /// Number of splats.
    #[arg(long, default_value_t = 256)]
    pub n: usize,
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    /// Target size divided by render size.
    #[arg(long, default_value_t = 1.0)]
    pub render_scale: f64,
    #[arg(long, value_enum, default_value = "spline-analytic")]
    pub mode: FitMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output scene JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-iteration CSV log.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub log_every: usize,
    #[arg(long, default_value_t = 0.2)]
    pub ssim_weight: f64,
    /// Remove nearly transparent splats every this many iterations.
    #[arg(long)]
    pub prune_every: Option<usize>,
    #[arg(long, default_value_t = LearningRates::default().mean)]
    pub lr_mean: f64,
    #[arg(long, default_value_t = LearningRates::default().log_scale)]
    pub lr_scale: f64,
    #[arg(long, default_value_t = LearningRates::default().rotation)]
    pub lr_rotation: f64,
    #[arg(long, default_value_t = LearningRates::default().opacity)]
    pub lr_opacity: f64,
    #[arg(long, default_value_t = LearningRates::default().color)]
    pub lr_color: f64,
}

impl FitArgs {
    pub fn config(&self) -> FitConfig {
        FitConfig {
            iterations: self.iters,
            num_gaussians: self.n,
            render_scale: self.render_scale,
            upscale_mode: self.mode.into(),
            learning_rates: LearningRates {
                mean: self.lr_mean,
                log_scale: self.lr_scale,
                rotation: self.lr_rotation,
                opacity: self.lr_opacity,
                color: self.lr_color,
            },
            ssim_weight: self.ssim_weight,
            seed: self.seed,
            log_every: self.log_every,
            prune_every: self.prune_every,
            background: [0.0; 3],
        }
    }
}

/// Returns the final PSNR.
pub fn fit_target(args: &FitArgs) -> Result<f64> {
    let cfg = args.config();
    cfg.validate()?;
    let target = png_io::load_linear(&args.target)?;
    let report = fit(&target, &cfg)?;
    scene_file::save_scene(&args.out, &report.scene)?;
    if let Some(path) = &args.report {
        let mut csv = format!("{}\n", FitRow::CSV_HEADER);
        for row in &report.rows {
            csv.push_str(&row.csv_line());
            csv.push('\n');
        }
        fs::write(path, csv).map_err(|e| CliError::io(path, e))?;
    }
    Ok(report.final_psnr)
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
}

/// PSNR and SSIM on the stored (gamma-encoded) values.
pub fn eval(args: &EvalArgs) -> Result<(f64, f64)> {
    let a = png_io::load_encoded(&args.a)?;
    let b = png_io::load_encoded(&args.b)?;
    Ok((psnr(&a, &b)?, ssim(&a, &b)?))
}

#[derive(Debug, Args)]
pub struct Demo1dArgs {
    #[arg(long)]
    pub out: PathBuf,
}

pub fn demo1d(args: &Demo1dArgs) -> Result<demo1d::Demo1d> {
    let demo = demo1d::run()?;
    fs::write(&args.out, demo.to_csv()).map_err(|e| CliError::io(&args.out, e))?;
    Ok(demo)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Upscale,
    Train,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub suite: Suite,
    #[arg(long)]
    pub out: PathBuf,
    /// Directory holding the corpus PNGs.
    #[arg(long, default_value_os_t = bench::default_corpus_dir())]
    pub corpus: PathBuf,
    /// Timed repetitions per measurement (the median is reported).
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// Iterations per fit in the train suite.
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    /// Splats per fit in the train suite.
    #[arg(long, default_value_t = 400)]
    pub n: usize,
}

pub fn bench(args: &BenchArgs) -> Result<Vec<bench::BenchRow>> {
    let corpus = bench::load_corpus(&args.corpus)?;
    let rows = match args.suite {
        Suite::Upscale => bench::upscale_suite(&corpus, args.repeats)?,
        Suite::Train => bench::train_suite(&corpus, args.iters, args.n)?,
    };
    fs::write(&args.out, bench::to_csv(&rows)).map_err(|e| CliError::io(&args.out, e))?;
    Ok(rows)
}
