//! Row-major RGB float images and the gradient-carrying render output.

use crate::error::{Error, Result};

pub type Rgb = [f64; 3];

/// Linear RGB image, row-major, `f64` per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Rgb>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, value: Rgb) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Rgb) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self { width, height, pixels }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: Rgb) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    pub fn clamped(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|p| p.map(|v| v.clamp(0.0, 1.0))).collect(),
        }
    }

    pub(crate) fn ensure_same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Dimension(format!(
                "image sizes differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

/// Rendered image plus analytical spatial derivatives.
///
/// Derivatives are with respect to continuous pixel units of this image;
/// pixel `(i, j)` is sampled at `(i + 0.5, j + 0.5)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientImage {
    pub width: usize,
    pub height: usize,
    pub color: Vec<Rgb>,
    pub d_dx: Vec<Rgb>,
    pub d_dy: Vec<Rgb>,
    pub d_dxdy: Vec<Rgb>,
    /// Terminal accumulated alpha `A_N`.
    pub alpha: Vec<f64>,
    pub alpha_dx: Vec<f64>,
    pub alpha_dy: Vec<f64>,
    pub alpha_dxdy: Vec<f64>,
    /// Terminal transmittance `1 - A_N`, accumulated as a product so it stays
    /// accurate when `A_N` is close to 1.
    pub transmittance: Vec<f64>,
    pub contrib_count: Vec<u32>,
}

impl GradientImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            color: vec![[0.0; 3]; n],
            d_dx: vec![[0.0; 3]; n],
            d_dy: vec![[0.0; 3]; n],
            d_dxdy: vec![[0.0; 3]; n],
            alpha: vec![0.0; n],
            alpha_dx: vec![0.0; n],
            alpha_dy: vec![0.0; n],
            alpha_dxdy: vec![0.0; n],
            transmittance: vec![1.0; n],
            contrib_count: vec![0; n],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn color_image(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            pixels: self.color.clone(),
        }
    }

    /// The four interpolation channels (value, d/dx, d/dy, d2/dxdy) of one pixel.
    #[inline]
    pub(crate) fn channels(&self, idx: usize) -> [Rgb; 4] {
        [self.color[idx], self.d_dx[idx], self.d_dy[idx], self.d_dxdy[idx]]
    }

    pub fn is_finite(&self) -> bool {
        let rgb = |v: &Vec<Rgb>| v.iter().flatten().all(|x| x.is_finite());
        let s = |v: &Vec<f64>| v.iter().all(|x| x.is_finite());
        rgb(&self.color)
            && rgb(&self.d_dx)
            && rgb(&self.d_dy)
            && rgb(&self.d_dxdy)
            && s(&self.alpha)
            && s(&self.alpha_dx)
            && s(&self.alpha_dy)
            && s(&self.alpha_dxdy)
            && s(&self.transmittance)
    }
}

/// Adjoints of the four interpolation channels of a [`GradientImage`]:
/// `dL/dI`, `dL/d(dI/dx)`, `dL/d(dI/dy)`, `dL/d(d2I/dxdy)` per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointImage {
    pub width: usize,
    pub height: usize,
    pub w: Vec<Rgb>,
    pub wx: Vec<Rgb>,
    pub wy: Vec<Rgb>,
    pub wxy: Vec<Rgb>,
}

impl AdjointImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            w: vec![[0.0; 3]; n],
            wx: vec![[0.0; 3]; n],
            wy: vec![[0.0; 3]; n],
            wxy: vec![[0.0; 3]; n],
        }
    }

    /// Adjoint that touches only the value channel.
    pub fn from_value(adj: &Image) -> Self {
        let mut out = Self::zeros(adj.width, adj.height);
        out.w.clone_from(&adj.pixels);
        out
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn is_finite(&self) -> bool {
        [&self.w, &self.wx, &self.wy, &self.wxy]
            .iter()
            .all(|v| v.iter().flatten().all(|x| x.is_finite()))
    }

    /// `sum(w * I + wx * I_x + wy * I_y + wxy * I_xy)` over all pixels and channels.
    pub fn dot(&self, img: &GradientImage) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.w.len() {
            for ch in 0..3 {
                acc += self.w[i][ch] * img.color[i][ch]
                    + self.wx[i][ch] * img.d_dx[i][ch]
                    + self.wy[i][ch] * img.d_dy[i][ch]
                    + self.wxy[i][ch] * img.d_dxdy[i][ch];
            }
        }
        acc
    }
}
