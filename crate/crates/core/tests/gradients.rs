//! Analytic image derivatives and parameter gradients against finite
//! differences, through the renderer alone and through the upscaler.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splineup::gaussian::logit;
use splineup::raster::{render_backward_with, render_forward_with, PreparedScene};
use splineup::spline::{fd_gradients, fd_gradients_backward, upscale_backward_to, upscale_spline_unclamped};
use splineup::{AdjointImage, Gaussian2D, Image, RenderOptions, Scene};

fn random_scene(rng: &mut ChaCha8Rng, n: usize, size: usize) -> Scene {
    let s = size as f64;
    let mut scene = Scene::new((size, size), [rng.gen(), rng.gen(), rng.gen()]);
    scene.gaussians = (0..n)
        .map(|_| Gaussian2D {
            mean: [rng.gen_range(0.0..s), rng.gen_range(0.0..s)],
            log_scale: [rng.gen_range(1.0f64..s / 5.0).ln(), rng.gen_range(1.0f64..s / 5.0).ln()],
            rotation: rng.gen_range(-3.0..3.0),
            opacity_logit: logit(rng.gen_range(0.1..0.95)),
            color: [
                rng.gen_range(0.05..0.95),
                rng.gen_range(0.05..0.95),
                rng.gen_range(0.05..0.95),
            ],
            depth: rng.gen(),
        })
        .collect();
    scene
}

fn random_adjoint(rng: &mut ChaCha8Rng, w: usize, h: usize) -> AdjointImage {
    let mut adj = AdjointImage::zeros(w, h);
    for plane in [&mut adj.w, &mut adj.wx, &mut adj.wy, &mut adj.wxy] {
        for p in plane.iter_mut() {
            *p = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
        }
    }
    adj
}

fn params_mut(g: &mut Gaussian2D, k: usize) -> &mut f64 {
    match k {
        0 => &mut g.mean[0],
        1 => &mut g.mean[1],
        2 => &mut g.log_scale[0],
        3 => &mut g.log_scale[1],
        4 => &mut g.rotation,
        5 => &mut g.opacity_logit,
        6..=8 => &mut g.color[k - 6],
        _ => unreachable!(),
    }
}

fn grad_of(g: &splineup::raster::GaussianGrad, k: usize) -> f64 {
    match k {
        0 | 1 => g.d_mean[k],
        2 | 3 => g.d_log_scale[k - 2],
        4 => g.d_rotation,
        5 => g.d_opacity_logit,
        _ => g.d_color[k - 6],
    }
}

fn assert_close(analytic: f64, fd: f64, what: &str) {
    let err = (analytic - fd).abs();
    assert!(
        err <= 1e-6 || err <= 1e-4 * analytic.abs().max(fd.abs()),
        "{what}: analytic {analytic} vs fd {fd}"
    );
}

#[test]
fn image_derivatives_match_point_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = 1e-3;
    for _ in 0..5 {
        let scene = random_scene(&mut rng, 20, 32);
        let prep = PreparedScene::new(&scene, 32, 32, RenderOptions::default()).unwrap();
        let img = prep.render();
        for py in 0..32 {
            for px in 0..32 {
                let ranks = prep.contributors(px, py);
                let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
                let at = |dx: f64, dy: f64| prep.shade_at(x + dx, y + dy, &ranks).color;
                let i = py * 32 + px;
                for ch in 0..3 {
                    let fx = (at(h, 0.0)[ch] - at(-h, 0.0)[ch]) / (2.0 * h);
                    let fy = (at(0.0, h)[ch] - at(0.0, -h)[ch]) / (2.0 * h);
                    let fxy = (at(h, h)[ch] - at(h, -h)[ch] - at(-h, h)[ch] + at(-h, -h)[ch]) / (4.0 * h * h);
                    assert!((img.d_dx[i][ch] - fx).abs() < 1e-4);
                    assert!((img.d_dy[i][ch] - fy).abs() < 1e-4);
                    assert!((img.d_dxdy[i][ch] - fxy).abs() < 1e-3);
                }
            }
        }
    }
}

fn check_backward(options: RenderOptions, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = random_scene(&mut rng, 8, 24);
    let adj = random_adjoint(&mut rng, 24, 24);
    let objective = |s: &Scene| adj.dot(&render_forward_with(s, 24, 24, options).unwrap());
    let fwd = render_forward_with(&scene, 24, 24, options).unwrap();
    let grads = render_backward_with(&scene, &fwd, &adj, options).unwrap();
    let h = 1e-6;
    for (gi, g) in grads.grads.iter().enumerate() {
        for k in 0..9 {
            let mut plus = scene.clone();
            *params_mut(&mut plus.gaussians[gi], k) += h;
            let mut minus = scene.clone();
            *params_mut(&mut minus.gaussians[gi], k) -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            assert_close(grad_of(g, k), fd, &format!("splat {gi} param {k}"));
        }
    }
}

#[test]
fn backward_matches_finite_differences_without_culling() {
    for seed in 0..3 {
        check_backward(RenderOptions::exact(), seed);
    }
}

#[test]
fn backward_matches_finite_differences_with_default_culling() {
    for seed in 10..13 {
        check_backward(RenderOptions::default(), seed);
    }
}

#[test]
fn reference_resolution_scaling_is_differentiated() {
    // render at half the reference size: gradients are still w.r.t. reference units
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let scene = random_scene(&mut rng, 6, 32);
    let options = RenderOptions::exact();
    let adj = random_adjoint(&mut rng, 16, 16);
    let fwd = render_forward_with(&scene, 16, 16, options).unwrap();
    let grads = render_backward_with(&scene, &fwd, &adj, options).unwrap();
    let h = 1e-6;
    for (gi, g) in grads.grads.iter().enumerate() {
        for k in 0..6 {
            let mut plus = scene.clone();
            *params_mut(&mut plus.gaussians[gi], k) += h;
            let mut minus = scene.clone();
            *params_mut(&mut minus.gaussians[gi], k) -= h;
            let f = |s: &Scene| adj.dot(&render_forward_with(s, 16, 16, options).unwrap());
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            assert_close(grad_of(g, k), fd, &format!("splat {gi} param {k}"));
        }
    }
}

/// Loss `sum(w * upscale(render))` for a fixed weight image.
fn pipeline_check(analytic: bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(if analytic { 31 } else { 32 });
    let scene = random_scene(&mut rng, 8, 40);
    let options = RenderOptions::exact();
    let (lw, lh, tw, th) = (20, 20, 40, 40);
    let weights = Image::from_fn(tw, th, |_, _| {
        [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ]
    });
    let upscale = |s: &Scene| {
        let fwd = render_forward_with(s, lw, lh, options).unwrap();
        if analytic {
            upscale_spline_unclamped(&fwd, tw, th).unwrap()
        } else {
            upscale_spline_unclamped(&fd_gradients(&fwd.color_image()).unwrap(), tw, th).unwrap()
        }
    };
    let objective = |s: &Scene| -> f64 {
        upscale(s)
            .pixels
            .iter()
            .zip(&weights.pixels)
            .map(|(p, w)| p[0] * w[0] + p[1] * w[1] + p[2] * w[2])
            .sum()
    };
    let fwd = render_forward_with(&scene, lw, lh, options).unwrap();
    let channels = upscale_backward_to(lw, lh, &weights).unwrap();
    let adj = if analytic {
        channels
    } else {
        AdjointImage::from_value(&fd_gradients_backward(&channels).unwrap())
    };
    let grads = render_backward_with(&scene, &fwd, &adj, options).unwrap();
    let h = 1e-6;
    for (gi, g) in grads.grads.iter().enumerate() {
        for k in 0..9 {
            let mut plus = scene.clone();
            *params_mut(&mut plus.gaussians[gi], k) += h;
            let mut minus = scene.clone();
            *params_mut(&mut minus.gaussians[gi], k) -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            assert_close(grad_of(g, k), fd, &format!("splat {gi} param {k}"));
        }
    }
}

#[test]
fn spline_pipeline_gradient_matches_finite_differences() {
    pipeline_check(true);
}

#[test]
fn bicubic_pipeline_gradient_matches_finite_differences() {
    pipeline_check(false);
}
