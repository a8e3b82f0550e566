//! One-dimensional reconstruction of a Gaussian-mixture signal from sparse
//! samples, with finite-difference slopes versus exact slopes.

use std::fmt::Write as _;

use splineup::spline::{fd_slopes, hermite1d, HermiteSample};

use crate::error::Result;

/// `(weight, center, width)` of each bump on `[0, 1]`.
const BUMPS: [(f64, f64, f64); 3] = [(1.0, 0.3, 0.08), (-0.6, 0.55, 0.05), (0.8, 0.75, 0.1)];
pub const SAMPLES: usize = 12;
pub const DENSE_ROWS: usize = 1001;

pub fn signal(t: f64) -> f64 {
    BUMPS
        .iter()
        .map(|&(w, c, s)| w * (-(t - c).powi(2) / (2.0 * s * s)).exp())
        .sum()
}

pub fn signal_slope(t: f64) -> f64 {
    BUMPS
        .iter()
        .map(|&(w, c, s)| -w * (t - c) / (s * s) * (-(t - c).powi(2) / (2.0 * s * s)).exp())
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demo1d {
    /// `(t, truth, fd, analytic)` on the dense grid.
    pub rows: Vec<[f64; 4]>,
    pub sample_t: Vec<f64>,
    pub rms_fd: f64,
    pub rms_analytic: f64,
}

pub fn run() -> Result<Demo1d> {
    let dt = 1.0 / (SAMPLES - 1) as f64;
    let sample_t: Vec<f64> = (0..SAMPLES).map(|i| i as f64 * dt).collect();
    let values: Vec<f64> = sample_t.iter().map(|&t| signal(t)).collect();
    let fd: Vec<HermiteSample> = sample_t
        .iter()
        .zip(&values)
        .zip(fd_slopes(&values, dt))
        .map(|((&t, &value), slope)| HermiteSample { t, value, slope })
        .collect();
    let analytic: Vec<HermiteSample> = sample_t
        .iter()
        .zip(&values)
        .map(|(&t, &value)| HermiteSample {
            t,
            value,
            slope: signal_slope(t),
        })
        .collect();

    let mut rows = Vec::with_capacity(DENSE_ROWS);
    let (mut se_fd, mut se_an) = (0.0, 0.0);
    for k in 0..DENSE_ROWS {
        let t = k as f64 / (DENSE_ROWS - 1) as f64;
        let truth = signal(t);
        let f = hermite1d(&fd, t)?;
        let a = hermite1d(&analytic, t)?;
        se_fd += (f - truth).powi(2);
        se_an += (a - truth).powi(2);
        rows.push([t, truth, f, a]);
    }
    Ok(Demo1d {
        rows,
        sample_t,
        rms_fd: (se_fd / DENSE_ROWS as f64).sqrt(),
        rms_analytic: (se_an / DENSE_ROWS as f64).sqrt(),
    })
}

impl Demo1d {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,truth,fd_reconstruction,analytic_reconstruction\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r[0], r[1], r[2], r[3]).unwrap();
        }
        out
    }
}
