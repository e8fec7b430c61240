mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsunroll::interp::{reconstruct_clip, BuiltinInterpolator};
use rsunroll::metrics::psnr_clip;
use rsunroll::patches::{brute_force_nearest, NnMode, PatchIndex, PatchSet, PATCH_LEN};
use rsunroll::refine::{
    build_patch_index, compute_alpha, refine, refine_with_state, term_ratio, Lambda, RefineConfig, RefineState,
};
use rsunroll::{Image, Shutter, VideoClip};

fn gray_clip(w: usize, h: usize, k: usize, shutter: Shutter, f: impl Fn(usize, usize, usize) -> f32) -> VideoClip {
    let frames = (0..k).map(|t| Image::from_fn(w, h, 1, |x, y, _| f(x, y, t))).collect();
    VideoClip::new(frames, shutter).unwrap()
}

fn random_clip(w: usize, h: usize, k: usize, seed: u64) -> VideoClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = (0..k).map(|_| Image::from_fn(w, h, 1, |_, _, _| rng.gen())).collect();
    VideoClip::new(frames, Shutter::Rolling).unwrap()
}

fn state_for(gs: &VideoClip, init: &VideoClip, assignment: Vec<usize>, alpha: Vec<f64>, lambda: f64) -> RefineState {
    let planes = |c: &VideoClip| c.frames.iter().map(|f| f.plane(0).to_vec()).collect::<Vec<_>>();
    RefineState {
        width: gs.width(),
        height: gs.height(),
        current: planes(gs),
        initial: planes(init),
        assignment,
        alpha,
        lambda,
        trace: Vec::new(),
    }
}

#[test]
fn minimal_clip_has_one_patch_per_row() {
    let rs = random_clip(7, 5, 3, 1);
    assert_eq!(build_patch_index(&rs, NnMode::Exact).unwrap().len(), 5);
    assert!(build_patch_index(&random_clip(6, 5, 3, 1), NnMode::Exact).is_err());
    assert!(build_patch_index(&random_clip(7, 5, 2, 1), NnMode::Exact).is_err());
}

#[test]
fn index_finds_its_own_patches() {
    let rs = random_clip(12, 6, 5, 2);
    let idx = build_patch_index(&rs, NnMode::Exact).unwrap();
    for i in (0..idx.len()).step_by(7) {
        let n = idx.nearest(idx.patches().patch(i));
        assert_eq!(n.dist2, 0.0);
        assert_eq!(n.index, i);
    }
}

#[test]
fn exact_index_matches_brute_force_on_random_queries() {
    let rs = random_clip(24, 10, 6, 3);
    let set = PatchSet::from_clip(&rs).unwrap();
    let idx = PatchIndex::build(set.clone(), NnMode::Exact);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let q: Vec<f32> = (0..PATCH_LEN).map(|_| rng.gen()).collect();
        let want = brute_force_nearest(&set, &q, |_| false).unwrap();
        assert_eq!(idx.nearest(&q), want);
    }
}

#[test]
fn alpha_marks_a_three_pixel_band_on_vertical_edges() {
    let cfg = RefineConfig::default();
    let flat = gray_clip(16, 3, 5, Shutter::Global, |_, _, _| 0.4);
    assert!(compute_alpha(&flat, &cfg).unwrap().iter().all(|&a| a == cfg.alpha_flat));

    let (w, k) = (20, 6);
    let edge = gray_clip(w, 2, k, Shutter::Global, |x, _, _| if x >= 10 { 0.9 } else { 0.1 });
    let alpha = compute_alpha(&edge, &cfg).unwrap();
    assert!(alpha.iter().all(|&a| a == cfg.alpha_edge || a == cfg.alpha_flat));
    // Patch centers sit at x + 3; count distinct edge-weighted centers per (row, t).
    let xs = w - 6;
    for chunk in alpha.chunks(xs) {
        let centers: Vec<usize> = (0..xs).filter(|&x| chunk[x] == cfg.alpha_edge).map(|x| x + 3).collect();
        assert_eq!(centers.len(), 3, "{centers:?}");
        assert!(centers.windows(2).all(|c| c[1] == c[0] + 1));
        assert!(centers.contains(&9) || centers.contains(&10));
    }
}

/// Loss by explicit loops over patch coordinates, reading the clips directly.
fn naive_loss(gs: &VideoClip, init: &VideoClip, rs: &VideoClip, st: &RefineState) -> (f64, f64) {
    let rs_set = PatchSet::from_clip(rs).unwrap();
    let (w, h, k) = (gs.width(), gs.height(), gs.len());
    let (mut nn, mut val) = (0.0f64, 0.0f64);
    let mut p = 0;
    for y in 0..h {
        for t in 0..k - 2 {
            for x in 0..w - 6 {
                let c = rs_set.coord(st.assignment[p]);
                let a = st.alpha[p];
                for dt in 0..3 {
                    for dx in 0..7 {
                        let g = gs.frames[t + dt].get(x + dx, y, 0) as f64;
                        let g0 = init.frames[t + dt].get(x + dx, y, 0) as f64;
                        let r = rs.frames[c.t + dt].get(c.x + dx, c.row, 0) as f64;
                        nn += a * (g - r).powi(2);
                        val += (1.0 - a) * (g - g0).powi(2);
                    }
                }
                p += 1;
            }
        }
    }
    (nn, val)
}

#[test]
fn loss_matches_naive_summation() {
    let gs = random_clip(16, 16, 4, 5);
    let init = random_clip(16, 16, 4, 6);
    let rs = random_clip(16, 16, 5, 7);
    let set = PatchSet::from_clip(&rs).unwrap();
    let m = PatchSet::from_clip(&gs).unwrap().len();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let assignment = (0..m).map(|_| rng.gen_range(0..set.len())).collect();
    let alpha = (0..m).map(|_| rng.gen()).collect();
    let st = state_for(&gs, &init, assignment, alpha, 0.37);
    let got = st.loss(&set);
    let (nn, val) = naive_loss(&gs, &init, &rs, &st);
    assert!((got.nn - nn).abs() <= 1e-9 * nn);
    assert!((got.validity - val).abs() <= 1e-9 * val);
    assert!((got.total - (nn + 0.37 * val)).abs() <= 1e-9 * got.total);
}

#[test]
fn loss_vanishes_for_recurring_unchanged_patches() {
    let rs = random_clip(10, 4, 4, 9);
    let gs = VideoClip::new(rs.frames.clone(), Shutter::Global).unwrap();
    let set = PatchSet::from_clip(&rs).unwrap();
    let m = set.len();
    let st = state_for(&gs, &gs, (0..m).collect(), vec![0.5; m], 1.0);
    let l = st.loss(&set);
    assert_eq!((l.nn, l.validity, l.total), (0.0, 0.0, 0.0));
    // Zero weights annihilate the NN term whatever the content.
    let other = random_clip(10, 4, 4, 10);
    let st = state_for(&other, &gs, vec![3; m], vec![0.0; m], 1.0);
    assert_eq!(st.loss(&set).nn, 0.0);
}

#[test]
fn pixel_solve_matches_gradient_descent() {
    // Clips need two rows; rows are independent, so only row 0 is checked.
    let (w, h, k) = (10, 2, 4);
    let gs = random_clip(w, h, k, 11);
    let init = random_clip(w, h, k, 12);
    let rs = random_clip(w, h, k, 13);
    let set = PatchSet::from_clip(&rs).unwrap();
    let m = PatchSet::from_clip(&gs).unwrap().len();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let assignment: Vec<usize> = (0..m).map(|_| rng.gen_range(0..set.len())).collect();
    let alpha: Vec<f64> = (0..m).map(|_| rng.gen_range(0.05..0.95)).collect();
    let lambda = 0.8;
    let st = state_for(&gs, &init, assignment.clone(), alpha.clone(), lambda);
    let solved = st.solve(&set, lambda);

    // Gradient descent on the same quadratic, in f64, until the step stalls.
    let mut g: Vec<f64> = (0..k)
        .flat_map(|t| (0..w).map(move |x| (t, x)))
        .map(|(t, x)| gs.frames[t].get(x, 0, 0) as f64)
        .collect();
    let g0: Vec<f64> = (0..k)
        .flat_map(|t| (0..w).map(move |x| (t, x)))
        .map(|(t, x)| init.frames[t].get(x, 0, 0) as f64)
        .collect();
    let step = 0.5 / (21.0 * (1.0 + lambda));
    for _ in 0..200_000 {
        let mut grad = vec![0.0f64; k * w];
        for t in 0..k - 2 {
            for x in 0..w - 6 {
                let p = t * (w - 6) + x;
                let c = set.coord(assignment[p]);
                for dt in 0..3 {
                    for dx in 0..7 {
                        let i = (t + dt) * w + x + dx;
                        let r = rs.frames[c.t + dt].get(c.x + dx, c.row, 0) as f64;
                        grad[i] += 2.0 * alpha[p] * (g[i] - r) + 2.0 * lambda * (1.0 - alpha[p]) * (g[i] - g0[i]);
                    }
                }
            }
        }
        let norm: f64 = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        g.iter_mut().zip(&grad).for_each(|(v, d)| *v -= step * d);
        if norm < 1e-13 {
            break;
        }
    }
    for t in 0..k {
        for x in 0..w {
            let d = (solved[t][x] as f64 - g[t * w + x]).abs();
            // Row 0 occupies the first `w` samples of each plane.
            assert!(d <= 1e-6, "({x}, {t}): {} vs {}", solved[t][x], g[t * w + x]);
        }
    }
}

#[test]
fn perfect_static_estimate_is_a_fixed_point() {
    let rs = common::static_clip(14, 10, 4, Shutter::Rolling);
    let gs = VideoClip::new(rs.frames[1..].to_vec(), Shutter::Global).unwrap();
    assert_eq!(refine(&gs, &rs, &RefineConfig::default()).unwrap(), gs);
}

#[test]
fn zero_iterations_return_the_input() {
    let rs = random_clip(12, 6, 4, 15);
    let gs = random_clip(12, 6, 3, 16);
    let cfg = RefineConfig {
        iterations: 0,
        ..Default::default()
    };
    assert_eq!(refine(&gs, &rs, &cfg).unwrap(), gs);
}

#[test]
fn refuses_short_or_mismatched_clips() {
    let rs = random_clip(12, 6, 4, 17);
    assert!(refine(&random_clip(12, 6, 2, 18), &rs, &RefineConfig::default()).is_err());
    assert!(refine(&random_clip(13, 6, 3, 18), &rs, &RefineConfig::default()).is_err());
}

#[test]
fn noisy_estimate_loss_decreases_without_harm() {
    let spec = common::translation(48, 6, 1.6, 0.3);
    let p = common::pair(&spec, 19);
    let gt = common::tail(&p.gs);
    let merged = reconstruct_clip(&p.rs, &BuiltinInterpolator).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut gauss = || {
        let (u1, u2): (f32, f32) = (rng.gen_range(f32::EPSILON..1.0), rng.gen());
        (-2.0 * u1.ln()).sqrt() * (std::f32::consts::TAU * u2).cos()
    };
    let frames = merged
        .frames
        .iter()
        .map(|f| {
            let mut n = f.clone();
            n.data_mut()
                .iter_mut()
                .for_each(|v| *v = (*v + 0.02 * gauss()).clamp(0.0, 1.0));
            n
        })
        .collect();
    let noisy = VideoClip::new(frames, Shutter::Global).unwrap();
    let out = refine_with_state(&noisy, &p.rs, &RefineConfig::default()).unwrap();
    let trace = &out.state.trace;
    assert!(trace.len() >= 2);
    for w in trace.windows(2) {
        assert!(w[1].total < w[0].total, "{trace:?}");
    }
    let ratio = term_ratio(&trace[1], out.state.lambda);
    assert!((0.1..=10.0).contains(&ratio), "ratio {ratio}");
    let before = psnr_clip(&noisy, &gt, None).unwrap();
    let after = psnr_clip(&out.clip, &gt, None).unwrap();
    assert!(after >= before - 0.1, "{before:.3} -> {after:.3} dB");
}

#[test]
fn approximate_and_windowed_search_stay_monotone() {
    let spec = common::with_sprite(32, 5);
    let p = common::pair(&spec, 22);
    let init = reconstruct_clip(&p.rs, &BuiltinInterpolator).unwrap();
    for cfg in [
        RefineConfig {
            nn_mode: NnMode::Approximate { eps: 0.05 },
            ..Default::default()
        },
        RefineConfig {
            row_window: Some(8),
            ..Default::default()
        },
        RefineConfig {
            lambda: Lambda::Fixed(2.0),
            ..Default::default()
        },
        RefineConfig {
            lambda: Lambda::Ratio,
            ..Default::default()
        },
    ] {
        let out = refine_with_state(&init, &p.rs, &cfg).unwrap();
        for w in out.state.trace.windows(2) {
            assert!(w[1].total <= w[0].total);
        }
    }
}

#[test]
fn auto_lambda_is_the_largest_balanced_weight() {
    let p = common::pair(&common::with_sprite(40, 5), 23);
    let init = reconstruct_clip(&p.rs, &BuiltinInterpolator).unwrap();
    let run = |lambda| {
        refine_with_state(
            &init,
            &p.rs,
            &RefineConfig {
                lambda,
                ..Default::default()
            },
        )
        .unwrap()
        .state
    };
    let (auto, ratio) = (run(Lambda::Auto), run(Lambda::Ratio));
    for st in [&auto, &ratio] {
        let r = term_ratio(&st.trace[1], st.lambda);
        assert!((0.1..=10.0).contains(&r), "ratio {r} at lambda {}", st.lambda);
    }
    assert!(auto.lambda >= ratio.lambda);
    // Slightly more validity weight leaves the band.
    let above = run(Lambda::Fixed(auto.lambda * 1.1));
    assert!(term_ratio(&above.trace[1], above.lambda) > 10.0 / 1.02);
}
