//! Splat parametrization and footprint evaluation.
//!
//! A splat's footprint is `alpha(x, y) = opacity * exp(G)` with the quadratic
//! exponent `G = -(a dx^2 + 2 b dx dy + c dy^2)`, where `[[a, b], [b, c]]` is
//! half the inverse covariance (see [`Conic`]).

use crate::error::{Error, Result};

pub type Mat2 = [[f64; 2]; 2];

/// One 2D Gaussian splat in reference-resolution pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian2D {
    pub mean: [f64; 2],
    /// Natural log of the per-axis standard deviation.
    pub log_scale: [f64; 2],
    /// Radians, counter-clockwise from the x axis.
    pub rotation: f64,
    pub opacity_logit: f64,
    /// Linear RGB; clamped to `[0, 1]` only while rendering.
    pub color: [f64; 3],
    /// Sort key, smaller is nearer.
    pub depth: f64,
}

impl Gaussian2D {
    pub fn opacity(&self) -> f64 {
        logistic(self.opacity_logit)
    }

    pub fn covariance(&self) -> Result<Mat2> {
        covariance_from_params(self.log_scale, self.rotation)
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.rotation.is_finite()
            && self.opacity_logit.is_finite()
            && self.color.iter().all(|v| v.is_finite())
            && self.depth.is_finite()
    }
}

/// The optimizable model: splats, a fixed background and the resolution the
/// splat parameters are expressed in.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub gaussians: Vec<Gaussian2D>,
    pub background: [f64; 3],
    pub reference_resolution: (usize, usize),
}

impl Scene {
    pub fn new(reference_resolution: (usize, usize), background: [f64; 3]) -> Self {
        Self {
            gaussians: Vec::new(),
            background,
            reference_resolution,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.reference_resolution;
        if w == 0 || h == 0 {
            return Err(Error::Dimension(format!(
                "reference resolution must be positive, got {w}x{h}"
            )));
        }
        if !self.background.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("background is not finite".into()));
        }
        if let Some(i) = self.gaussians.iter().position(|g| !g.is_finite()) {
            return Err(Error::Domain(format!("gaussian {i} has non-finite parameters")));
        }
        Ok(())
    }
}

/// Half the inverse covariance, `[[a, b], [b, c]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Conic {
    pub fn determinant(&self) -> f64 {
        self.a * self.c - self.b * self.b
    }

    pub fn is_positive_definite(&self) -> bool {
        self.a > 0.0 && self.c > 0.0 && self.determinant() > 0.0
    }

    /// Quadratic form `a dx^2 + 2 b dx dy + c dy^2` (i.e. `-G`).
    #[inline]
    pub fn quad(&self, dx: f64, dy: f64) -> f64 {
        self.a * dx * dx + 2.0 * self.b * dx * dy + self.c * dy * dy
    }
}

/// Footprint value and its spatial derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AlphaSample {
    pub alpha: f64,
    pub dx: f64,
    pub dy: f64,
    pub dxy: f64,
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `R(rotation) * diag(exp(2 log_scale)) * R(rotation)^T`.
pub fn covariance_from_params(log_scale: [f64; 2], rotation: f64) -> Result<Mat2> {
    if !(log_scale[0].is_finite() && log_scale[1].is_finite() && rotation.is_finite()) {
        return Err(Error::Domain(format!(
            "covariance parameters must be finite (log_scale {log_scale:?}, rotation {rotation})"
        )));
    }
    let (s, c) = rotation.sin_cos();
    let vx = (2.0 * log_scale[0]).exp();
    let vy = (2.0 * log_scale[1]).exp();
    let xx = c * c * vx + s * s * vy;
    let xy = c * s * (vx - vy);
    let yy = s * s * vx + c * c * vy;
    Ok([[xx, xy], [xy, yy]])
}

pub const MIN_COVARIANCE_DET: f64 = 1e-12;

/// Folds the `1/2` of `exp(-d^T Sigma^-1 d / 2)` into the returned conic.
pub fn conic_from_covariance(cov: &Mat2) -> Result<Conic> {
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    if !(det > MIN_COVARIANCE_DET) || cov[0][0] <= 0.0 {
        return Err(Error::DegenerateCovariance(det));
    }
    let half_inv = 0.5 / det;
    Ok(Conic {
        a: cov[1][1] * half_inv,
        b: -0.5 * (cov[0][1] + cov[1][0]) * half_inv,
        c: cov[0][0] * half_inv,
    })
}

/// Closed-form conic `R diag(exp(-2 log_scale) / 2) R^T`, no inversion.
/// Used by the rasterizer; agrees with the covariance route wherever that
/// route is numerically well conditioned.
pub fn conic_from_params(log_scale: [f64; 2], rotation: f64) -> Conic {
    let (s, c) = rotation.sin_cos();
    let u = 0.5 * (-2.0 * log_scale[0]).exp();
    let v = 0.5 * (-2.0 * log_scale[1]).exp();
    Conic {
        a: c * c * u + s * s * v,
        b: c * s * (u - v),
        c: s * s * u + c * c * v,
    }
}

/// Derivatives of the exponent `G` at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Exponent {
    pub g: f64,
    pub gx: f64,
    pub gy: f64,
    pub gxy: f64,
}

#[inline]
pub(crate) fn exponent(conic: &Conic, dx: f64, dy: f64) -> Exponent {
    Exponent {
        g: -conic.quad(dx, dy),
        gx: -2.0 * (conic.a * dx + conic.b * dy),
        gy: -2.0 * (conic.b * dx + conic.c * dy),
        gxy: -2.0 * conic.b,
    }
}

/// Unclamped footprint `opacity * exp(G)` and its derivatives at `(x, y)`.
pub fn eval_gaussian(mean: [f64; 2], conic: &Conic, opacity: f64, x: f64, y: f64) -> AlphaSample {
    let e = exponent(conic, x - mean[0], y - mean[1]);
    alpha_from_exponent(opacity, &e)
}

#[inline]
pub(crate) fn alpha_from_exponent(opacity: f64, e: &Exponent) -> AlphaSample {
    let alpha = opacity * e.g.exp();
    AlphaSample {
        alpha,
        dx: alpha * e.gx,
        dy: alpha * e.gy,
        dxy: alpha * (e.gx * e.gy + e.gxy),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, LN_2};

    fn assert_mat(m: Mat2, expected: Mat2, tol: f64) {
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(m[i][j], expected[i][j], epsilon = tol);
            }
        }
    }

    #[test]
    fn covariance_examples() {
        assert_mat(
            covariance_from_params([0.0, 0.0], 0.0).unwrap(),
            [[1.0, 0.0], [0.0, 1.0]],
            0.0,
        );
        assert_mat(
            covariance_from_params([LN_2, 0.0], 0.0).unwrap(),
            [[4.0, 0.0], [0.0, 1.0]],
            1e-15,
        );
        assert_mat(
            covariance_from_params([LN_2, 0.0], FRAC_PI_2).unwrap(),
            [[1.0, 0.0], [0.0, 4.0]],
            1e-12,
        );
    }

    #[test]
    fn covariance_rejects_non_finite() {
        assert!(matches!(
            covariance_from_params([f64::NAN, 0.0], 0.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            covariance_from_params([0.0, 0.0], f64::INFINITY),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn conic_examples() {
        let c = conic_from_covariance(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(c, Conic { a: 0.5, b: 0.0, c: 0.5 });
        let c = conic_from_covariance(&[[4.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(
            c,
            Conic {
                a: 0.125,
                b: 0.0,
                c: 0.5
            }
        );
        // adjugate of [[2,1],[1,2]] is [[2,-1],[-1,2]], det 3, halved
        let c = conic_from_covariance(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
        assert_abs_diff_eq!(c.a, 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.b, -1.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.c, 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn conic_rejects_degenerate() {
        let err = conic_from_covariance(&[[1.0, 1.0], [1.0, 1.0]]).unwrap_err();
        assert!(matches!(err, Error::DegenerateCovariance(_)));
        assert!(conic_from_covariance(&[[1e-7, 0.0], [0.0, 1e-6]]).is_err());
    }

    #[test]
    fn eval_at_center_and_unit_offset() {
        let conic = Conic { a: 0.5, b: 0.0, c: 0.5 };
        let s = eval_gaussian([3.0, 4.0], &conic, 1.0, 3.0, 4.0);
        assert_eq!(
            s,
            AlphaSample {
                alpha: 1.0,
                dx: 0.0,
                dy: 0.0,
                dxy: 0.0
            }
        );

        // d/dx of exp(-x^2/2) at x=1 is -exp(-1/2)
        let s = eval_gaussian([0.0, 0.0], &conic, 1.0, 1.0, 0.0);
        let e = (-0.5f64).exp();
        assert_abs_diff_eq!(s.alpha, e, epsilon = 1e-15);
        assert_abs_diff_eq!(s.dx, -e, epsilon = 1e-15);
        assert_abs_diff_eq!(s.dy, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.dxy, 0.0, epsilon = 1e-15);
    }

    fn conic_strategy() -> impl Strategy<Value = (Conic, [f64; 2], f64)> {
        (
            -1.0f64..2.5,
            -1.0f64..2.5,
            -3.2f64..3.2,
            0.05f64..0.99,
            -5.0f64..5.0,
            -5.0f64..5.0,
        )
            .prop_map(|(l0, l1, rot, op, mx, my)| {
                let cov = covariance_from_params([l0, l1], rot).unwrap();
                (conic_from_covariance(&cov).unwrap(), [mx, my], op)
            })
    }

    proptest! {
        #[test]
        fn spatial_derivatives_match_central_differences(
            (conic, mean, op) in conic_strategy(),
            x in -8.0f64..8.0,
            y in -8.0f64..8.0,
        ) {
            let h = 1e-4;
            let s = eval_gaussian(mean, &conic, op, x, y);
            let at = |x: f64, y: f64| eval_gaussian(mean, &conic, op, x, y).alpha;
            let fd_x = (at(x + h, y) - at(x - h, y)) / (2.0 * h);
            let fd_y = (at(x, y + h) - at(x, y - h)) / (2.0 * h);
            let fd_xy = (eval_gaussian(mean, &conic, op, x, y + h).dx
                - eval_gaussian(mean, &conic, op, x, y - h).dx) / (2.0 * h);
            prop_assert!((fd_x - s.dx).abs() < 1e-6);
            prop_assert!((fd_y - s.dy).abs() < 1e-6);
            prop_assert!((fd_xy - s.dxy).abs() < 1e-6);
        }

        #[test]
        fn conic_route_fails_only_below_determinant_floor(
            l0 in -10.0f64..=10.0, l1 in -10.0f64..=10.0, rot in -10.0f64..10.0
        ) {
            let cov = covariance_from_params([l0, l1], rot).unwrap();
            let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
            match conic_from_covariance(&cov) {
                Ok(k) => prop_assert!(det > MIN_COVARIANCE_DET && k.a > 0.0 && k.c > 0.0),
                Err(Error::DegenerateCovariance(d)) => prop_assert!(d <= MIN_COVARIANCE_DET),
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
            let closed = conic_from_params([l0, l1], rot);
            prop_assert!(closed.a > 0.0 && closed.c > 0.0 && closed.a.is_finite() && closed.c.is_finite());
        }

        #[test]
        fn closed_form_conic_matches_inverse(
            l0 in -3.0f64..3.0, l1 in -3.0f64..3.0, rot in -3.2f64..3.2
        ) {
            let k = conic_from_covariance(&covariance_from_params([l0, l1], rot).unwrap()).unwrap();
            let q = conic_from_params([l0, l1], rot);
            let scale = k.a.abs().max(k.c.abs());
            prop_assert!((k.a - q.a).abs() <= 1e-10 * scale);
            prop_assert!((k.b - q.b).abs() <= 1e-10 * scale);
            prop_assert!((k.c - q.c).abs() <= 1e-10 * scale);
        }

        #[test]
        fn conic_inverts_back_to_covariance(
            l0 in -3.0f64..3.0, l1 in -3.0f64..3.0, rot in -3.2f64..3.2
        ) {
            let cov = covariance_from_params([l0, l1], rot).unwrap();
            let k = conic_from_covariance(&cov).unwrap();
            prop_assert!(k.is_positive_definite());
            // invert 2 * conic
            let (a, b, c) = (2.0 * k.a, 2.0 * k.b, 2.0 * k.c);
            let det = a * c - b * b;
            let back = [[c / det, -b / det], [-b / det, a / det]];
            let scale = cov[0][0].abs().max(cov[1][1].abs());
            for i in 0..2 {
                for j in 0..2 {
                    prop_assert!((back[i][j] - cov[i][j]).abs() <= 1e-10 * scale);
                }
            }
        }
    }
}
