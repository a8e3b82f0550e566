use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use splineup_cli::commands::{self, BenchArgs, Demo1dArgs, EvalArgs, FitArgs, RenderArgs, UpscaleArgs};
use splineup_cli::CliError;

/// Gaussian-splat renderer with analytical image gradients and
/// gradient-aware spline upscaling.
///
/// PNG files are read and written as 8-bit values with a plain gamma 2.2
/// transfer (stored = linear^(1/2.2)); all computation happens on linear
/// values. No other color management is applied.
#[derive(Debug, Parser)]
#[command(name = "splineup", version, about, long_about)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a scene file to PNG, optionally dumping the gradient planes.
    Render(RenderArgs),
    /// Upscale a PNG or a gradient dump.
    Upscale(UpscaleArgs),
    /// Fit a splat scene to a target PNG.
    Fit(FitArgs),
    /// Print PSNR and SSIM between two PNGs (on stored values).
    Eval(EvalArgs),
    /// Write the 1D Hermite reconstruction comparison as CSV.
    Demo1d(Demo1dArgs),
    /// Run the timing/quality benchmark and write CSV.
    Bench(BenchArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match cli.command {
        Command::Render(args) => commands::render(&args)?,
        Command::Upscale(args) => commands::upscale(&args)?,
        Command::Fit(args) => {
            let psnr = commands::fit_target(&args)?;
            println!("final psnr {psnr:.4} dB");
        }
        Command::Eval(args) => {
            let (psnr, ssim) = commands::eval(&args)?;
            println!("psnr {psnr:.6}");
            println!("ssim {ssim:.6}");
        }
        Command::Demo1d(args) => {
            let demo = commands::demo1d(&args)?;
            println!("rms fd {:.6e}", demo.rms_fd);
            println!("rms analytic {:.6e}", demo.rms_analytic);
        }
        Command::Bench(args) => {
            let rows = commands::bench(&args)?;
            println!("{} rows written to {}", rows.len(), args.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            // help and version requests are not failures
            return if err.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err.downcast_ref::<CliError>().map_or(1, CliError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
