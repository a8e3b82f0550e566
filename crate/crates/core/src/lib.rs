//! Differentiable 2D Gaussian splatting with analytical image-space gradients
//! and gradient-aware bicubic spline upscaling.
//!
//! The pipeline is:
//!
//! 1. [`raster::render_forward`] blends depth-sorted splats front to back and
//!    emits a [`GradientImage`]: per-pixel color together with its exact
//!    `d/dx`, `d/dy` and `d2/dxdy` derivatives.
//! 2. [`spline::upscale_spline`] fits one bicubic patch per source pixel cell
//!    from those derivatives and resamples at any factor.
//! 3. [`spline::upscale_backward`] and [`raster::render_backward`] carry a loss
//!    gradient back through both stages to the scene parameters, so a scene
//!    can be optimized with upscaling inside the loop ([`fit`]).

pub mod baselines;
pub mod error;
pub mod fit;
pub mod gaussian;
pub mod image;
pub mod metrics;
pub mod raster;
pub mod spline;

pub use error::{Error, Result};
pub use gaussian::{AlphaSample, Conic, Gaussian2D, Scene};
pub use image::{AdjointImage, GradientImage, Image};
pub use raster::{render_backward, render_forward, RenderOptions, SceneGrads};
