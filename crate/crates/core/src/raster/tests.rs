use super::*;
use crate::gaussian::{eval_gaussian, logit, Gaussian2D, Scene};
use crate::image::AdjointImage;
use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn splat(mean: [f64; 2], scale: f64, opacity: f64, color: [f64; 3], depth: f64) -> Gaussian2D {
    Gaussian2D {
        mean,
        log_scale: [scale.ln(), scale.ln()],
        rotation: 0.0,
        opacity_logit: logit(opacity),
        color,
        depth,
    }
}

fn random_scene(rng: &mut ChaCha8Rng, n: usize, size: usize) -> Scene {
    let s = size as f64;
    let mut scene = Scene::new((size, size), [rng.gen(), rng.gen(), rng.gen()]);
    for _ in 0..n {
        scene.gaussians.push(Gaussian2D {
            mean: [rng.gen_range(0.0..s), rng.gen_range(0.0..s)],
            log_scale: [
                rng.gen_range(0.5f64..(s / 6.0)).ln(),
                rng.gen_range(0.5f64..(s / 6.0)).ln(),
            ],
            rotation: rng.gen_range(-3.0..3.0),
            opacity_logit: rng.gen_range(-3.0..3.0),
            color: [rng.gen(), rng.gen(), rng.gen()],
            depth: rng.gen(),
        });
    }
    scene
}

#[test]
fn empty_scene_is_background() {
    let scene = Scene::new((8, 6), [0.0; 3]);
    let img = render_forward(&scene, 8, 6).unwrap();
    assert!(img.color.iter().all(|c| *c == [0.0; 3]));
    assert!(img
        .d_dx
        .iter()
        .chain(&img.d_dy)
        .chain(&img.d_dxdy)
        .all(|c| *c == [0.0; 3]));
    assert!(img.alpha.iter().all(|a| *a == 0.0));
    assert!(img.contrib_count.iter().all(|n| *n == 0));
}

#[test]
fn zero_sized_output_is_rejected() {
    let scene = Scene::new((8, 8), [0.0; 3]);
    assert!(matches!(render_forward(&scene, 0, 8), Err(crate::Error::Dimension(_))));
}

#[test]
fn centered_opaque_splat_is_clamped_and_symmetric() {
    let mut scene = Scene::new((9, 9), [0.0; 3]);
    scene.gaussians.push(Gaussian2D {
        opacity_logit: 40.0,
        ..splat([4.5, 4.5], 2.0, 0.5, [1.0, 0.0, 0.0], 0.0)
    });
    let img = render_forward(&scene, 9, 9).unwrap();
    let c = 4 * 9 + 4;
    assert_abs_diff_eq!(img.color[c][0], 0.999, epsilon = 1e-12);
    assert_eq!(img.color[c][1], 0.0);
    assert_abs_diff_eq!(img.d_dx[c][0], 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(img.d_dy[c][0], 0.0, epsilon = 1e-12);
}

#[test]
fn two_splats_match_direct_blend_formula() {
    let bg = [0.2, 0.3, 0.4];
    let g1 = Gaussian2D {
        rotation: 0.3,
        ..splat([5.0, 6.0], 3.0, 0.7, [0.9, 0.1, 0.2], 1.0)
    };
    let g2 = Gaussian2D {
        log_scale: [1.2, 0.4],
        ..splat([7.0, 5.0], 2.0, 0.6, [0.1, 0.8, 0.3], 2.0)
    };
    let mut scene = Scene::new((12, 12), bg);
    // stored back to front; sorting must put g1 first
    scene.gaussians = vec![g2, g1];
    let img = render_forward(&scene, 12, 12).unwrap();
    let alpha_of = |g: &Gaussian2D, x: f64, y: f64| {
        let k = crate::gaussian::conic_from_covariance(&g.covariance().unwrap()).unwrap();
        eval_gaussian(g.mean, &k, g.opacity(), x, y).alpha
    };
    for py in 0..12 {
        for px in 0..12 {
            let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
            let a1 = alpha_of(&g1, x, y);
            let a2 = alpha_of(&g2, x, y);
            if a1 < ALPHA_CULL || a2 < ALPHA_CULL {
                continue;
            }
            for ch in 0..3 {
                let expected = a1 * g1.color[ch] + (1.0 - a1) * a2 * g2.color[ch] + (1.0 - a1) * (1.0 - a2) * bg[ch];
                assert_abs_diff_eq!(img.color[py * 12 + px][ch], expected, epsilon = 1e-12);
            }
        }
    }
}

#[test]
fn sort_examples() {
    let mut scene = Scene::new((4, 4), [0.0; 3]);
    for d in [3.0, 1.0, 2.0] {
        scene.gaussians.push(splat([1.0, 1.0], 1.0, 0.5, [1.0; 3], d));
    }
    assert_eq!(sort_by_depth(&scene), vec![1, 2, 0]);
    scene.gaussians.truncate(2);
    scene.gaussians[0].depth = 1.0;
    assert_eq!(sort_by_depth(&scene), vec![0, 1]);
}

#[test]
fn sort_matches_reference_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut scene = Scene::new((4, 4), [0.0; 3]);
    for _ in 0..100 {
        // coarse depths so ties occur
        let d = (rng.gen_range(0..20) as f64) * 0.5;
        scene.gaussians.push(splat([1.0, 1.0], 1.0, 0.5, [1.0; 3], d));
    }
    let mut expected: Vec<(f64, usize)> = scene.gaussians.iter().enumerate().map(|(i, g)| (g.depth, i)).collect();
    expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let expected: Vec<usize> = expected.into_iter().map(|(_, i)| i).collect();
    assert_eq!(sort_by_depth(&scene), expected);
}

#[test]
fn tiled_matches_untiled_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for size in [17usize, 40, 64] {
        let scene = random_scene(&mut rng, 40, size);
        let tiled = render_forward_with(&scene, size, size + 3, RenderOptions::default()).unwrap();
        let untiled = render_forward_with(
            &scene,
            size,
            size + 3,
            RenderOptions {
                tiled: false,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(tiled, untiled);
    }
}

#[test]
fn permuting_distinct_depths_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scene = random_scene(&mut rng, 30, 48);
    let mut shuffled = scene.clone();
    shuffled.gaussians.reverse();
    shuffled.gaussians.swap(3, 17);
    assert_eq!(
        render_forward(&scene, 48, 48).unwrap(),
        render_forward(&shuffled, 48, 48).unwrap()
    );
}

#[test]
fn transparent_splats_leave_background() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut scene = random_scene(&mut rng, 20, 32);
    for g in &mut scene.gaussians {
        g.opacity_logit = -60.0;
    }
    let img = render_forward(&scene, 32, 32).unwrap();
    assert!(img.color.iter().all(|c| *c == scene.background));
    assert!(img
        .d_dx
        .iter()
        .chain(&img.d_dy)
        .chain(&img.d_dxdy)
        .all(|c| *c == [0.0; 3]));
}

#[test]
fn early_termination_changes_little() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let mut scene = random_scene(&mut rng, 50, 32);
        for g in &mut scene.gaussians {
            g.opacity_logit = g.opacity_logit.abs() + 2.0;
        }
        let on = render_forward(&scene, 32, 32).unwrap();
        let off = render_forward_with(
            &scene,
            32,
            32,
            RenderOptions {
                stop_transmittance: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        for (a, b) in on.color.iter().zip(&off.color) {
            for ch in 0..3 {
                assert!((a[ch] - b[ch]).abs() <= 2e-3);
            }
        }
    }
}

#[test]
fn accumulated_alpha_is_monotone_and_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut st = AlphaState::default();
    for _ in 0..200 {
        let al = crate::gaussian::AlphaSample {
            alpha: rng.gen_range(0.0..ALPHA_MAX),
            ..Default::default()
        };
        let next = st.blend(&al);
        let (a0, a1) = (st.accumulated()[0], next.accumulated()[0]);
        assert!(a1 >= a0 && a1 <= 1.0);
        st = next;
    }
}

#[test]
fn point_shading_at_pixel_center_matches_render() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let scene = random_scene(&mut rng, 30, 32);
    let prep = PreparedScene::new(&scene, 32, 32, RenderOptions::default()).unwrap();
    let img = prep.render();
    for (px, py) in [(0, 0), (5, 9), (16, 16), (31, 20)] {
        let list = prep.contributors(px, py);
        assert_eq!(list.len(), img.contrib_count[py * 32 + px] as usize);
        let p = prep.shade_at(px as f64 + 0.5, py as f64 + 0.5, &list);
        let i = py * 32 + px;
        assert_eq!(p.color, img.color[i]);
        assert_eq!(p.d_dx, img.d_dx[i]);
        assert_eq!(p.d_dxdy, img.d_dxdy[i]);
    }
}

#[test]
fn invert_examples() {
    let half = crate::gaussian::AlphaSample {
        alpha: 0.5,
        ..Default::default()
    };
    let one = AlphaState::default().blend(&half);
    assert_eq!(one.accumulated(), [0.5, 0.0, 0.0, 0.0]);
    assert_eq!(invert_alpha_state(&one, &half).unwrap(), AlphaState::default());

    let s = AlphaState::from_terminal(0.75, 0.1, -0.2, 0.05);
    let clear = crate::gaussian::AlphaSample::default();
    assert_eq!(invert_alpha_state(&s, &clear).unwrap(), s);

    let opaque = crate::gaussian::AlphaSample {
        alpha: 0.9999,
        ..Default::default()
    };
    assert!(matches!(
        invert_alpha_state(&s, &opaque),
        Err(crate::Error::Numerical(_))
    ));
}

#[test]
fn inversion_replays_random_chains() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let mut states = vec![AlphaState::default()];
        let mut samples = Vec::new();
        for _ in 0..20 {
            let al = crate::gaussian::AlphaSample {
                alpha: rng.gen_range(0.0..0.6),
                dx: rng.gen_range(-0.5..0.5),
                dy: rng.gen_range(-0.5..0.5),
                dxy: rng.gen_range(-0.5..0.5),
            };
            states.push(states.last().unwrap().blend(&al));
            samples.push(al);
        }
        let mut cur = *states.last().unwrap();
        for i in (0..samples.len()).rev() {
            cur = invert_alpha_state(&cur, &samples[i]).unwrap();
            for (got, want) in cur.accumulated().into_iter().zip(states[i].accumulated()) {
                assert_abs_diff_eq!(got, want, epsilon = 1e-8);
            }
        }
    }
}

#[test]
fn rendered_terminal_state_inverts_to_every_prefix() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut scene = random_scene(&mut rng, 60, 32);
    for g in &mut scene.gaussians {
        g.opacity_logit = g.opacity_logit.abs() + 4.0;
    }
    let prep = PreparedScene::new(&scene, 32, 32, RenderOptions::default()).unwrap();
    let img = prep.render();
    let mut saturated = 0;
    for py in 0..32 {
        for px in 0..32 {
            let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
            let samples: Vec<_> = prep
                .contributors(px, py)
                .iter()
                .map(|&r| prep.splats[r].sample(x, y).alpha)
                .collect();
            let mut states = vec![AlphaState::default()];
            for al in &samples {
                states.push(states.last().unwrap().blend(al));
            }
            let i = py * 32 + px;
            saturated += usize::from(img.transmittance[i] < 1e-3);
            assert_abs_diff_eq!(img.transmittance[i], 1.0 - img.alpha[i], epsilon = 1e-15);
            let mut cur = AlphaState::from_terminal(
                img.transmittance[i],
                img.alpha_dx[i],
                img.alpha_dy[i],
                img.alpha_dxdy[i],
            );
            for k in (0..samples.len()).rev() {
                cur = invert_alpha_state(&cur, &samples[k]).unwrap();
                for (got, want) in cur.accumulated().into_iter().zip(states[k].accumulated()) {
                    assert_abs_diff_eq!(got, want, epsilon = 1e-8);
                }
            }
        }
    }
    assert!(saturated > 0);
}

#[test]
fn zero_adjoint_gives_zero_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let scene = random_scene(&mut rng, 10, 32);
    let fwd = render_forward(&scene, 32, 32).unwrap();
    let grads = render_backward(&scene, &fwd, &AdjointImage::zeros(32, 32)).unwrap();
    assert_eq!(grads.grads.len(), 10);
    assert!(grads.grads.iter().all(GaussianGrad::is_zero));
}

#[test]
fn backward_rejects_bad_adjoints() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let scene = random_scene(&mut rng, 3, 16);
    let fwd = render_forward(&scene, 16, 16).unwrap();
    assert!(matches!(
        render_backward(&scene, &fwd, &AdjointImage::zeros(15, 16)),
        Err(crate::Error::Dimension(_))
    ));
    let mut adj = AdjointImage::zeros(16, 16);
    adj.wx[3][1] = f64::NAN;
    assert!(matches!(
        render_backward(&scene, &fwd, &adj),
        Err(crate::Error::Domain(_))
    ));
}

#[test]
fn single_splat_color_gradient_is_alpha() {
    let mut scene = Scene::new((16, 16), [0.1, 0.1, 0.1]);
    scene.gaussians.push(splat([7.0, 8.0], 3.0, 0.8, [0.5, 0.4, 0.3], 0.0));
    let fwd = render_forward(&scene, 16, 16).unwrap();
    let (px, py) = (9usize, 6usize);
    let mut adj = AdjointImage::zeros(16, 16);
    adj.w[py * 16 + px] = [1.0; 3];
    let grads = render_backward(&scene, &fwd, &adj).unwrap();
    let alpha = fwd.alpha[py * 16 + px];
    for ch in 0..3 {
        assert_abs_diff_eq!(grads.grads[0].d_color[ch], alpha, epsilon = 1e-12);
    }
    // cross-check by finite differences on the color
    let h = 1e-6;
    let mut bumped = scene.clone();
    bumped.gaussians[0].color[1] += h;
    let up = render_forward(&bumped, 16, 16).unwrap().color[py * 16 + px][1];
    let base = fwd.color[py * 16 + px][1];
    assert_abs_diff_eq!((up - base) / h, alpha, epsilon = 1e-8);
}

#[test]
fn color_gradient_is_exact_coefficient() {
    // output is affine in each color, so the value-channel gradient equals
    // the finite difference up to rounding
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut scene = random_scene(&mut rng, 8, 24);
    for g in &mut scene.gaussians {
        g.color = g.color.map(|c| 0.1 + 0.8 * c);
    }
    let fwd = render_forward(&scene, 24, 24).unwrap();
    let weights: Vec<[f64; 3]> = (0..24 * 24).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
    let mut adj = AdjointImage::zeros(24, 24);
    adj.w.clone_from(&weights);
    let grads = render_backward(&scene, &fwd, &adj).unwrap();
    let loss = |s: &Scene| {
        let img = render_forward(s, 24, 24).unwrap();
        img.color
            .iter()
            .zip(&weights)
            .map(|(c, w)| c[0] * w[0] + c[1] * w[1] + c[2] * w[2])
            .sum::<f64>()
    };
    let base = loss(&scene);
    for k in 0..scene.gaussians.len() {
        for ch in 0..3 {
            let mut s = scene.clone();
            s.gaussians[k].color[ch] -= 0.05;
            let slope = (loss(&s) - base) / -0.05;
            assert_abs_diff_eq!(grads.grads[k].d_color[ch], slope, epsilon = 1e-10);
        }
    }
}

#[test]
fn zero_opacity_splat_gets_no_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let mut scene = random_scene(&mut rng, 6, 24);
    scene.gaussians[2].opacity_logit = -80.0;
    let fwd = render_forward_with(&scene, 24, 24, RenderOptions::exact()).unwrap();
    let mut adj = AdjointImage::zeros(24, 24);
    for i in 0..24 * 24 {
        adj.w[i] = [rng.gen(), rng.gen(), rng.gen()];
        adj.wx[i] = [rng.gen(), rng.gen(), rng.gen()];
        adj.wxy[i] = [rng.gen(), rng.gen(), rng.gen()];
    }
    let grads = render_backward_with(&scene, &fwd, &adj, RenderOptions::exact()).unwrap();
    let g = grads.grads[2];
    assert!(g.d_color.iter().all(|v| v.abs() < 1e-30));
    assert!(g.d_mean.iter().chain(&g.d_log_scale).all(|v| v.abs() < 1e-30));
}
