//! Tile-binned front-to-back rasterizer with analytical image gradients, and
//! its reverse-mode pass.

mod backward;
mod forward;

pub use backward::{
    invert_alpha_state, render_backward, render_backward_with, AlphaState, GaussianGrad, SceneGrads, MIN_INVERSION_KEEP,
};
pub use forward::{
    render_forward, render_forward_with, sort_by_depth, PointSample, PreparedScene, RenderOptions, Splat,
};

pub const TILE_SIZE: usize = 16;
/// Per-splat alpha is clamped to this before blending.
pub const ALPHA_MAX: f64 = 0.999;
pub const ALPHA_CULL: f64 = 1.0 / 255.0;
pub const STOP_TRANSMITTANCE: f64 = 1e-4;

#[cfg(test)]
mod tests;
