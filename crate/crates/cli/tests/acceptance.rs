//! One PASS/FAIL line per acceptance criterion; exits non-zero if any fails.
//!
//! Run with `cargo test -p rsunroll-cli --test acceptance`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsunroll::io::read_clip;
use rsunroll::metrics::{evaluate, psnr, psnr_clip, recurrence_stats, ssim};
use rsunroll::patches::PatchSet;
use rsunroll::refine::{refine_with_state, term_ratio, RefineConfig, RefineState};
use rsunroll::synth::{make_pair, SceneSpec};
use rsunroll::volume::{sample_gs, sample_rs, verify_shift_relation};
use rsunroll::{Image, Readout, Shutter, SpaceTimeVolume, VideoClip};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn bin(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_rsunroll"))
        .args(args)
        .output()
        .map_err(e2s)?;
    ensure(out.status.success(), || {
        format!("rsunroll {args:?}: {}", String::from_utf8_lossy(&out.stderr).trim())
    })
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn textured(size: usize, frames: usize, oversampling: usize, motion: &str, extra: &str) -> SceneSpec {
    SceneSpec::from_toml(&format!(
        r#"
width = {size}
height = {size}
frames = {frames}
oversampling = {oversampling}

[background]
kind = "texture"
texture = {{ id = 3, scale = 14.0 }}
motion = {motion}
{extra}
"#
    ))
    .unwrap()
}

fn translation(size: usize, frames: usize, vx: f64, vy: f64) -> SceneSpec {
    textured(
        size,
        frames,
        size,
        &format!(r#"{{ kind = "translation", velocity = [{vx}, {vy}] }}"#),
        "",
    )
}

fn sampling_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (w, h, mult) in [(9, 7, 1), (16, 12, 2), (5, 20, 3)] {
        let still = Image::from_fn(w, h, 3, |_, _, _| rng.gen());
        let r = mult * h;
        let vol = SpaceTimeVolume::new(vec![still; 4 * r + 1], r).map_err(e2s)?;
        let gs = sample_gs(&vol, 4).map_err(e2s)?;
        let rs = sample_rs(&vol, 4, Readout::Vertical, None).map_err(e2s)?;
        ensure(rs.frames == gs.frames, || format!("static {w}x{h}: RS != GS"))?;
    }
    let (w, h, periods) = (6, 16, 5);
    let r = 2 * h;
    let frames = (0..r * periods + 1)
        .map(|s| Image::filled(w, h, 1, s as f32 / (r * periods) as f32))
        .collect();
    let vol = SpaceTimeVolume::new(frames, r).map_err(e2s)?;
    let rs = sample_rs(&vol, periods - 1, Readout::Vertical, None).map_err(e2s)?;
    let step = 1.0 / 255.0;
    let mut worst = 0.0f64;
    for (k, f) in rs.frames.iter().enumerate() {
        let q = f.quantize(8);
        for j in 0..h {
            let want = (k as f64 + j as f64 / h as f64) / periods as f64;
            worst = worst.max((q.get(3, j, 0) as f64 - want).abs());
        }
    }
    ensure(worst <= step, || format!("ramp error {worst:.2e} > {step:.2e}"))?;
    Ok(format!("static bit-exact, ramp max error {worst:.2e}"))
}

fn shift_theorem() -> Check {
    let cases = [
        (0.6, 0.2),
        (-0.5, 0.3),
        (0.4, -0.4),
        (1.7, 0.0),
        (-0.3, -1.2),
        (1.1, 1.1),
    ];
    let mut worst = 0.0f64;
    for (i, &(vx, vy)) in cases.iter().enumerate() {
        let p = make_pair(&translation(32, 10, vx, vy), 40 + i as u64).map_err(e2s)?;
        let n = p.rs.rows;
        for j in [0, n / 4, n / 2, 3 * n / 4, n - 1] {
            let got = verify_shift_relation(&p.gs, &p.rs, j).map_err(e2s)?;
            worst = worst.max((got - j as f64 / n as f64).abs());
        }
    }
    ensure(worst <= 0.05, || format!("max deviation {worst:.4}"))?;
    Ok(format!("{} pairs, max deviation {worst:.4}", cases.len()))
}

fn oracle_exactness(dir: &Path) -> Check {
    let sprite = r#"
[[element]]
center = [16.0, 14.0]
shape = { kind = "disc", radius = 6.0 }
fill = { kind = "texture", texture = { id = 7, scale = 5.0 } }
motion = { kind = "translation", velocity = [-1.8, 0.6] }
"#;
    let mut checked = 0;
    for (i, (size, frames, c)) in [(32, 5, 1), (24, 4, 2)].into_iter().enumerate() {
        let spec = textured(
            size,
            frames,
            c * size,
            r#"{ kind = "translation", velocity = [1.3, 0.4] }"#,
            sprite,
        );
        let base = dir.join(format!("oracle{i}"));
        fs::create_dir_all(&base).map_err(e2s)?;
        let scene = base.join("scene.toml");
        fs::write(&scene, spec.to_toml()).map_err(e2s)?;
        let (clip, out) = (base.join("clip"), base.join("out"));
        bin(&[
            "synth",
            "--scene",
            s(&scene),
            "--seed",
            "5",
            "--out",
            s(&clip),
            "--deep",
        ])?;
        bin(&[
            "unroll",
            s(&clip.join("rs")),
            "--out",
            s(&out),
            "--interp",
            "oracle",
            "--scene",
            s(&scene),
            "--seed",
            "5",
            "--deep",
            "--no-refine",
        ])?;
        let gt = read_clip(&clip.join("gs")).map_err(e2s)?;
        let got = read_clip(&out.join("gs")).map_err(e2s)?;
        ensure(got.frames == gt.frames[1..], || {
            format!("R = {c}N: output differs from GS frames 1..")
        })?;
        checked += got.len();
    }
    Ok(format!("{checked} frames bit-exact at R = N and R = 2N"))
}

struct SuiteClip {
    name: String,
    rs: VideoClip,
    gs: VideoClip,
    out: PathBuf,
}

fn tail(clip: &VideoClip) -> Vec<Image> {
    clip.frames[1..].to_vec()
}

fn clip_of(frames: Vec<Image>) -> VideoClip {
    VideoClip::new(frames, Shutter::Global).unwrap()
}

/// Ten random scenes (4 translation, 3 rotation, 3 zoom), unrolled by the binary.
fn build_suite(dir: &Path) -> Result<Vec<SuiteClip>, String> {
    let mut suite = Vec::new();
    for (family, count, seed) in [("translation", 4, 7001), ("rotation", 3, 7002), ("zoom", 3, 7003)] {
        let root = dir.join(family);
        bin(&[
            "dataset",
            "--family",
            family,
            "--count",
            &count.to_string(),
            "--seed",
            &seed.to_string(),
            "--size",
            "64",
            "--frames",
            "6",
            "--out",
            s(&root),
        ])?;
        for i in 0..count {
            let sample = root.join(format!("sample_{i:04}"));
            let out = sample.join("unroll");
            bin(&["unroll", s(&sample.join("rs")), "--out", s(&out), "--deep"])?;
            suite.push(SuiteClip {
                name: format!("{family}/{i}"),
                rs: read_clip(&sample.join("rs")).map_err(e2s)?,
                gs: read_clip(&sample.join("gs")).map_err(e2s)?,
                out,
            });
        }
    }
    Ok(suite)
}

fn stage_psnr(c: &SuiteClip, stage: &str) -> Result<f64, String> {
    let pred = read_clip(&c.out.join(stage)).map_err(e2s)?;
    psnr_clip(&pred, &clip_of(tail(&c.gs)), None).map_err(e2s)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn pipeline_gain(suite: &[SuiteClip]) -> Check {
    let mut gains = Vec::new();
    for c in suite {
        let baseline = psnr_clip(&clip_of(tail(&c.rs)), &clip_of(tail(&c.gs)), None).map_err(e2s)?;
        gains.push(stage_psnr(c, "gs")? - baseline);
    }
    let g = mean(&gains);
    let min = gains.iter().cloned().fold(f64::INFINITY, f64::min);
    ensure(g >= 3.0, || format!("mean gain {g:.2} dB < 3 dB"))?;
    Ok(format!("mean gain {g:.2} dB over {} clips (min {min:.2})", suite.len()))
}

fn ensemble_direction(suite: &[SuiteClip], dir: &Path) -> Check {
    let weights = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/merge.mrgn");
    let (mut means, mut idents, mut trained) = (Vec::new(), Vec::new(), Vec::new());
    for (i, c) in suite.iter().enumerate() {
        means.push(stage_psnr(c, "mean")?);
        idents.push(stage_psnr(c, "proposals/aug_00")?);
        let merged = dir.join(format!("merged{i}"));
        bin(&[
            "merge",
            s(&c.out.join("proposals")),
            "--out",
            s(&merged),
            "--weights",
            s(&weights),
            "--deep",
        ])?;
        let pred = read_clip(&merged).map_err(e2s)?;
        trained.push(psnr_clip(&pred, &clip_of(tail(&c.gs)), None).map_err(e2s)?);
    }
    let (m, id, t) = (mean(&means), mean(&idents), mean(&trained));
    ensure(m >= id - 0.5, || {
        format!("mean-of-16 {m:.2} dB < identity {id:.2} - 0.5 dB")
    })?;
    ensure(t >= m, || format!("trained merge {t:.2} dB < mean merge {m:.2} dB"))?;
    Ok(format!("identity {id:.3} dB, mean-of-16 {m:.3} dB, trained {t:.3} dB"))
}

fn refine_contract(suite: &[SuiteClip]) -> Check {
    let cfg = RefineConfig::default();
    let (mut ratios, mut harmless) = (Vec::new(), 0);
    for c in suite {
        let merged = read_clip(&c.out.join("merged")).map_err(e2s)?;
        let out = refine_with_state(&merged, &c.rs, &cfg).map_err(e2s)?;
        let trace = &out.state.trace;
        for w in trace.windows(2) {
            ensure(w[1].total <= w[0].total, || {
                format!("{}: loss rose {:.6e} -> {:.6e}", c.name, w[0].total, w[1].total)
            })?;
        }
        let ratio = term_ratio(&trace[1], out.state.lambda);
        ensure((0.1..=10.0).contains(&ratio), || {
            format!("{}: term ratio {ratio:.3}", c.name)
        })?;
        ratios.push(ratio);
        if stage_psnr(c, "gs")? >= stage_psnr(c, "merged")? - 0.1 {
            harmless += 1;
        }
    }
    let frac = harmless as f64 / suite.len() as f64;
    ensure(frac >= 0.9, || format!("no-harm on {harmless}/{} clips", suite.len()))?;
    let (lo, hi) = ratios
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    Ok(format!(
        "monotone on all clips, term ratio in [{lo:.2}, {hi:.2}], no-harm {harmless}/{}",
        suite.len()
    ))
}

fn recurrence() -> Check {
    // Commensurate velocities would make distant GS patches exact copies.
    let a = make_pair(&translation(128, 12, 1.37, 0.41), 11).map_err(e2s)?;
    let b = make_pair(
        &textured(128, 12, 128, r#"{ kind = "rotation", omega = 0.03 }"#, ""),
        12,
    )
    .map_err(e2s)?;
    let paired = recurrence_stats(&a.gs, &a.rs).map_err(e2s)?;
    let unpaired = recurrence_stats(&a.gs, &b.rs).map_err(e2s)?;
    ensure(!paired.unreliable, || "paired statistic flagged unreliable".into())?;
    ensure(paired.mean_ratio < 1.5, || {
        format!("paired r = {:.3}", paired.mean_ratio)
    })?;
    ensure(paired.mean_ratio < unpaired.mean_ratio, || {
        format!("paired {:.3} >= unpaired {:.3}", paired.mean_ratio, unpaired.mean_ratio)
    })?;
    Ok(format!(
        "paired r = {:.3} ({:.0}% <= 1.1), unpaired r = {:.3}",
        paired.mean_ratio,
        100.0 * paired.frac_le_1_1,
        unpaired.mean_ratio
    ))
}

fn metrics_ground_truths() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = Image::from_fn(32, 24, 3, |_, _, _| rng.gen_range(0.1..0.9));
    let b = Image::from_fn(32, 24, 3, |x, y, c| {
        let v = a.get(x, y, c);
        if (x + y + c) % 2 == 0 {
            v + 10.0 / 255.0
        } else {
            v - 10.0 / 255.0
        }
    });
    let want = 20.0 * (255.0f64 / 10.0).log10();
    let got = psnr(&a, &b, None).map_err(e2s)?;
    ensure((got - want).abs() < 1e-3, || format!("PSNR {got:.4} vs {want:.4}"))?;
    let self_ssim = ssim(&a, &a, None).map_err(e2s)?;
    ensure(self_ssim == 1.0, || format!("SSIM(a, a) = {self_ssim}"))?;
    let p = make_pair(&translation(32, 4, 1.2, 0.3), 4).map_err(e2s)?;
    let ones: Vec<Image> = (0..4).map(|_| Image::filled(32, 32, 1, 1.0)).collect();
    let r = evaluate(&p.rs, &p.gs, Some(&ones), BTreeMap::new()).map_err(e2s)?;
    for f in &r.frames {
        ensure(f.masked_psnr.map(f64::to_bits) == Some(f.psnr.to_bits()), || {
            "masked PSNR differs".into()
        })?;
        ensure(f.masked_ssim.map(f64::to_bits) == Some(f.ssim.to_bits()), || {
            "masked SSIM differs".into()
        })?;
    }
    Ok(format!(
        "PSNR {got:.4} dB (closed form {want:.4}), SSIM(a, a) = 1, all-ones mask bit-exact"
    ))
}

fn gray(w: usize, h: usize, k: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k).map(|_| (0..w * h).map(|_| rng.gen()).collect()).collect()
}

fn refine_oracles() -> Check {
    // 10×1×4 toy: one output row; the RS source clip needs at least two rows.
    let (w, k, lambda) = (10, 4, 0.8);
    let rs_planes = gray(w, 2, k, 13);
    let rs = VideoClip::new(
        rs_planes
            .iter()
            .map(|p| Image::from_fn(w, 2, 1, |x, y, _| p[y * w + x]))
            .collect(),
        Shutter::Rolling,
    )
    .map_err(e2s)?;
    let set = PatchSet::from_clip(&rs).map_err(e2s)?;
    let m = (w - 6) * (k - 2);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let st = RefineState {
        width: w,
        height: 1,
        current: gray(w, 1, k, 11),
        initial: gray(w, 1, k, 12),
        assignment: (0..m).map(|_| rng.gen_range(0..set.len())).collect(),
        alpha: (0..m).map(|_| rng.gen_range(0.05..0.95)).collect(),
        lambda,
        trace: Vec::new(),
    };
    let solved = st.solve(&set, lambda);

    let mut g: Vec<f64> = st.current.concat().iter().map(|&v| v as f64).collect();
    let g0: Vec<f64> = st.initial.concat().iter().map(|&v| v as f64).collect();
    let step = 0.5 / (21.0 * (1.0 + lambda));
    for _ in 0..200_000 {
        let mut grad = vec![0.0f64; k * w];
        for p in 0..m {
            let (t, x) = (p / (w - 6), p % (w - 6));
            let src = set.patch(st.assignment[p]);
            let a = st.alpha[p];
            for dt in 0..3 {
                for dx in 0..7 {
                    let i = (t + dt) * w + x + dx;
                    let r = src[dt * 7 + dx] as f64;
                    grad[i] += 2.0 * a * (g[i] - r) + 2.0 * lambda * (1.0 - a) * (g[i] - g0[i]);
                }
            }
        }
        let norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        g.iter_mut().zip(&grad).for_each(|(v, d)| *v -= step * d);
        if norm < 1e-13 {
            break;
        }
    }
    let solve_err = (0..k * w)
        .map(|i| (solved[i / w][i % w] as f64 - g[i]).abs())
        .fold(0.0, f64::max);
    ensure(solve_err <= 1e-6, || format!("pixel solve off by {solve_err:.2e}"))?;

    // Loss against explicit loops over a larger random state.
    let (w, h, k) = (16, 9, 5);
    let rs_planes = gray(w, h, k + 1, 5);
    let rs = VideoClip::new(
        rs_planes
            .iter()
            .map(|p| Image::from_fn(w, h, 1, |x, y, _| p[y * w + x]))
            .collect(),
        Shutter::Rolling,
    )
    .map_err(e2s)?;
    let set = PatchSet::from_clip(&rs).map_err(e2s)?;
    let xs = w - 6;
    let m = h * (k - 2) * xs;
    let st = RefineState {
        width: w,
        height: h,
        current: gray(w, h, k, 6),
        initial: gray(w, h, k, 7),
        assignment: (0..m).map(|_| rng.gen_range(0..set.len())).collect(),
        alpha: (0..m).map(|_| rng.gen()).collect(),
        lambda: 0.37,
        trace: Vec::new(),
    };
    let (mut nn, mut val) = (0.0f64, 0.0f64);
    for y in 0..h {
        for t in 0..k - 2 {
            for x in 0..xs {
                let p = (y * (k - 2) + t) * xs + x;
                let c = set.coord(st.assignment[p]);
                let a = st.alpha[p];
                for dt in 0..3 {
                    for dx in 0..7 {
                        let i = y * w + x + dx;
                        let gv = st.current[t + dt][i] as f64;
                        let r = rs_planes[c.t + dt][c.row * w + c.x + dx] as f64;
                        nn += a * (gv - r).powi(2);
                        val += (1.0 - a) * (gv - st.initial[t + dt][i] as f64).powi(2);
                    }
                }
            }
        }
    }
    let got = st.loss(&set);
    let rel = ((got.nn - nn).abs() / nn).max((got.validity - val).abs() / val);
    ensure(rel <= 1e-9, || format!("loss relative error {rel:.2e}"))?;
    Ok(format!(
        "pixel solve within {solve_err:.1e}, loss within {rel:.1e} relative"
    ))
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut failed = 0;
    let mut report = |name: &str, budget: Option<Duration>, f: &mut dyn FnMut() -> Check| {
        let start = Instant::now();
        let mut result = f();
        let took = start.elapsed();
        if let (Ok(msg), Some(b)) = (&result, budget) {
            if took > b {
                result = Err(format!(
                    "{msg}; took {:.1} s, budget {:.0} s",
                    took.as_secs_f64(),
                    b.as_secs_f64()
                ));
            }
        }
        match result {
            Ok(msg) => println!("PASS {name}: {msg} [{:.1} s]", took.as_secs_f64()),
            Err(msg) => {
                failed += 1;
                println!("FAIL {name}: {msg} [{:.1} s]", took.as_secs_f64());
            }
        }
    };
    let secs = |s| Some(Duration::from_secs(s));
    report("sampling identities", secs(5), &mut sampling_identities);
    report("xt-slice shift theorem", secs(60), &mut shift_theorem);
    report("oracle end-to-end exactness", None, &mut || {
        oracle_exactness(dir.path())
    });

    // Suite generation and unrolling count toward the gain criterion's budget.
    let mut suite = None;
    report("built-in interpolator gain", secs(600), &mut || {
        let clips = build_suite(&dir.path().join("suite"))?;
        let result = pipeline_gain(&clips);
        suite = Some(clips);
        result
    });
    match &suite {
        Some(suite) => {
            report("ensemble merge ordering", None, &mut || {
                ensemble_direction(suite, dir.path())
            });
            report("refinement contract", None, &mut || refine_contract(suite));
        }
        None => {
            for name in ["ensemble merge ordering", "refinement contract"] {
                report(name, None, &mut || Err("suite unavailable".into()));
            }
        }
    }
    report("patch recurrence", secs(300), &mut recurrence);
    report("metrics ground truths", None, &mut metrics_ground_truths);
    report("refine brute-force oracles", None, &mut refine_oracles);
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
