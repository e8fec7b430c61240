mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsunroll::volume::{sample_gs, sample_rs, verify_shift_relation, xt_slice};
use rsunroll::{Error, Image, Readout, Shutter, SpaceTimeVolume, VideoClip};

#[test]
fn shift_relation_recovers_row_delay() {
    let cases = [(0.6, 0.2), (-0.5, 0.3), (0.4, -0.4), (0.7, 0.0), (-0.3, -0.6)];
    for (i, &(vx, vy)) in cases.iter().enumerate() {
        let spec = common::translation(32, 10, vx, vy);
        let p = common::pair(&spec, 40 + i as u64);
        let n = p.rs.rows;
        for j in [0, n / 4, n / 2, 3 * n / 4, n - 1] {
            let got = verify_shift_relation(&p.gs, &p.rs, j).unwrap();
            let want = j as f64 / n as f64;
            assert!((got - want).abs() <= 0.05, "case {i}, row {j}: {got:.4} vs {want:.4}");
        }
    }
}

#[test]
fn shift_relation_needs_texture_and_frames() {
    let flat = common::static_clip(16, 8, 5, Shutter::Global);
    let flat = VideoClip::new(
        flat.frames
            .iter()
            .map(|f| Image::filled(f.width(), f.height(), 3, 0.3))
            .collect(),
        Shutter::Global,
    )
    .unwrap();
    assert!(matches!(
        verify_shift_relation(&flat, &flat, 0),
        Err(Error::IndeterminateShift(_))
    ));
    let short = common::pair(&common::translation(16, 3, 0.5, 0.0), 1);
    assert!(verify_shift_relation(&short.gs, &short.rs, 2).is_err());
}

#[test]
fn slices_stack_rows_over_time() {
    let p = common::pair(&common::translation(16, 4, 1.0, 0.0), 2);
    let s = xt_slice(&p.rs, 5).unwrap();
    assert_eq!((s.data.width(), s.data.height()), (16, 4));
    for t in 0..4 {
        assert_eq!(s.data.row(1, t), p.rs.frames[t].row(1, 5));
    }
    assert!(xt_slice(&p.rs, 16).is_err());
}

fn temporal_ramp(w: usize, h: usize, r: usize, periods: usize) -> SpaceTimeVolume {
    let n = r * periods + 1;
    let frames = (0..n)
        .map(|s| Image::filled(w, h, 1, s as f32 / r as f32 / periods as f32))
        .collect();
    SpaceTimeVolume::new(frames, r).unwrap()
}

#[test]
fn ramp_rows_read_their_timestamps() {
    let (w, h, periods) = (5, 12, 4);
    let vol = temporal_ramp(w, h, 2 * h, periods);
    let rs = sample_rs(&vol, periods - 1, Readout::Vertical, None).unwrap();
    for k in 0..periods - 1 {
        for j in 0..h {
            let want = (k as f64 + j as f64 / h as f64) / periods as f64;
            assert!((rs.frames[k].get(2, j, 0) as f64 - want).abs() < 1e-6);
            assert_eq!(rs.timestamp(k, 0, j), k as f64 + j as f64 / h as f64);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn static_volume_rolling_equals_global(
        w in 2usize..12,
        h in 2usize..12,
        c in prop::sample::select(vec![1usize, 3]),
        mult in 1usize..4,
        count in 1usize..4,
        seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let still = Image::from_fn(w, h, c, |_, _, _| rng.gen());
        let r = mult * h;
        let vol = SpaceTimeVolume::new(vec![still; r * count + 1], r).unwrap();
        let gs = sample_gs(&vol, count).unwrap();
        let rs = sample_rs(&vol, count, Readout::Vertical, None).unwrap();
        prop_assert_eq!(rs.frames, gs.frames);
    }

    #[test]
    fn rs_rows_lie_between_their_bracketing_gs_frames(seed in 0u64..500, h in 2usize..10) {
        // Monotone ramp per pixel: every RS sample sits between GS frames k and k+1.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slope = Image::from_fn(3, h, 1, |_, _, _| rng.gen_range(0.0..0.3));
        let r = 2 * h;
        let frames = (0..3 * r + 1)
            .map(|s| Image::from_fn(3, h, 1, |x, y, _| slope.get(x, y, 0) * s as f32 / r as f32))
            .collect();
        let vol = SpaceTimeVolume::new(frames, r).unwrap();
        let gs = sample_gs(&vol, 3).unwrap();
        let rs = sample_rs(&vol, 2, Readout::Vertical, None).unwrap();
        for k in 0..2 {
            for y in 0..h {
                for x in 0..3 {
                    let v = rs.frames[k].get(x, y, 0);
                    prop_assert!(gs.frames[k].get(x, y, 0) <= v + 1e-6);
                    prop_assert!(v <= gs.frames[k + 1].get(x, y, 0) + 1e-6);
                }
            }
        }
    }
}
