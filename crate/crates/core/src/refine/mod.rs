//! Test-time refinement toward the RS clip's xt-patch statistics.
//!
//! Minimizes `L_NN + λ·L_validity` over the output luma by block coordinate
//! descent: assign each output patch its nearest RS patch, then solve the
//! resulting quadratic exactly. Every pixel's optimum is a weighted average of
//! the votes from the patches covering it.

pub mod canny;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::patches::{NnMode, PatchIndex, PatchSet, PATCH_LEN, PATCH_T, PATCH_W};
use crate::volume::VideoClip;

pub use canny::{canny, dilate};

/// Relative total-loss drop below which iterations stop early.
pub const EARLY_EXIT: f64 = 1e-4;
/// Floor on the validity term when choosing λ automatically.
pub const LAMBDA_EPS: f64 = 1e-12;
/// Relative slack allowed in the monotonicity assertion for rounding.
const MONOTONE_SLACK: f64 = 1e-9;
/// Largest first-solve term ratio (either way) the automatic λ accepts as balanced.
pub const BALANCE_LIMIT: f64 = 10.0;
/// λ search grid: `GRID_STEPS` points per decade, `GRID_SPAN` points each way.
const GRID_STEPS: i32 = 20;
const GRID_SPAN: i32 = 120;
const BALANCE_MARGIN: f64 = 1.02;

/// Sums over the patch samples covering one pixel: `Σα`, `Σα·r`, `Σα·r²`, `Σ(1−α)`.
#[derive(Clone, Copy, Debug, Default)]
struct Moments {
    a: f64,
    ar: f64,
    arr: f64,
    b: f64,
}

impl Moments {
    fn optimum(&self, g0: f64, lambda: f64) -> Option<f64> {
        let den = self.a + lambda * self.b;
        (den > 0.0).then(|| (self.ar + lambda * self.b * g0) / den)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lambda {
    /// The largest weight whose first solve leaves the two terms within
    /// [`BALANCE_LIMIT`] of each other, found by searching around [`Lambda::Ratio`].
    Auto,
    /// `L_NN / L_validity'` after the first assignment, where `L_validity'` is
    /// taken at the λ = 0 solve; rebalanced by search when the first solve
    /// leaves the terms more than [`BALANCE_LIMIT`] apart.
    Ratio,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub iterations: usize,
    pub lambda: Lambda,
    pub alpha_edge: f64,
    pub alpha_flat: f64,
    pub canny_low: f32,
    pub canny_high: f32,
    pub nn_mode: NnMode,
    /// Restrict NN candidates to RS rows within this distance of the query row.
    pub row_window: Option<usize>,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            iterations: 5,
            lambda: Lambda::Auto,
            alpha_edge: 0.9,
            alpha_flat: 0.1,
            canny_low: 0.1,
            canny_high: 0.2,
            nn_mode: NnMode::Exact,
            row_window: None,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        let (f, e) = (self.alpha_flat, self.alpha_edge);
        if !(0.0 <= f && f <= e && e <= 1.0) {
            return Err(Error::Config(format!(
                "need 0 <= alpha_flat <= alpha_edge <= 1, got {f} and {e}"
            )));
        }
        if let Lambda::Fixed(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("lambda must be finite and >= 0, got {l}")));
            }
        }
        if !(0.0 <= self.canny_low && self.canny_low <= self.canny_high) {
            return Err(Error::Config("need 0 <= canny_low <= canny_high".into()));
        }
        if let NnMode::Approximate { eps } = self.nn_mode {
            if !(0.0..=0.05).contains(&eps) {
                return Err(Error::Config(format!(
                    "approximate NN eps must be in [0, 0.05], got {eps}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub nn: f64,
    pub validity: f64,
    pub total: f64,
}

/// Patch pool over the luma of an RS clip.
pub fn build_patch_index(rs: &VideoClip, mode: NnMode) -> Result<PatchIndex> {
    Ok(PatchIndex::build(PatchSet::from_clip(rs)?, mode))
}

fn luma_planes(clip: &VideoClip) -> Vec<Vec<f32>> {
    clip.frames.iter().map(|f| f.luma().into_vec()).collect()
}

/// Per-patch α in patch-index order: `alpha_edge` where the patch center lies
/// on a dilated Canny edge of its xt-slice, else `alpha_flat`.
pub fn compute_alpha(gs_initial: &VideoClip, cfg: &RefineConfig) -> Result<Vec<f64>> {
    let (w, h, k) = (gs_initial.width(), gs_initial.height(), gs_initial.len());
    if k < PATCH_T || w < PATCH_W {
        return Err(Error::TooSmall(format!("{w}x{h}x{k} clip has no xt-patches")));
    }
    let luma = luma_planes(gs_initial);
    let xs = w - PATCH_W + 1;
    let ts = k - PATCH_T + 1;
    let per_row: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let slice: Vec<f32> = (0..k).flat_map(|t| luma[t][y * w..(y + 1) * w].to_vec()).collect();
            let edges = dilate(&canny(&slice, w, k, cfg.canny_low, cfg.canny_high), w, k);
            let mut out = Vec::with_capacity(xs * ts);
            for t in 0..ts {
                for x in 0..xs {
                    let on = edges[(t + PATCH_T / 2) * w + x + PATCH_W / 2];
                    out.push(if on { cfg.alpha_edge } else { cfg.alpha_flat });
                }
            }
            out
        })
        .collect();
    Ok(per_row.into_iter().flatten().collect())
}

/// The optimization variables and everything the losses depend on.
#[derive(Clone, Debug)]
pub struct RefineState {
    pub width: usize,
    pub height: usize,
    /// Current luma, one row-major plane per frame.
    pub current: Vec<Vec<f32>>,
    /// Frozen luma of the initial estimate.
    pub initial: Vec<Vec<f32>>,
    /// RS patch assigned to each output patch.
    pub assignment: Vec<usize>,
    pub alpha: Vec<f64>,
    pub lambda: f64,
    pub trace: Vec<LossTerms>,
}

impl RefineState {
    fn frames(&self) -> usize {
        self.current.len()
    }

    fn patches(&self, planes: &[Vec<f32>]) -> PatchSet {
        PatchSet::from_luma(planes, self.width, self.height)
    }

    /// Exact loss sums for the current pixels and assignment.
    pub fn loss(&self, rs: &PatchSet) -> LossTerms {
        let cur = self.patches(&self.current);
        let init = self.patches(&self.initial);
        // Per-row partial sums combined in a fixed order keep the result
        // independent of thread scheduling.
        let per_row = cur.len() / self.height;
        let partial: Vec<(f64, f64)> = (0..self.height)
            .into_par_iter()
            .map(|y| {
                let mut sn = 0.0f64;
                let mut sv = 0.0f64;
                for p in y * per_row..(y + 1) * per_row {
                    let g = cur.patch(p);
                    let r = rs.patch(self.assignment[p]);
                    let g0 = init.patch(p);
                    let a = self.alpha[p];
                    let mut dn = 0.0f64;
                    let mut dv = 0.0f64;
                    for i in 0..PATCH_LEN {
                        let e = g[i] as f64 - r[i] as f64;
                        let f = g[i] as f64 - g0[i] as f64;
                        dn += e * e;
                        dv += f * f;
                    }
                    sn += a * dn;
                    sv += (1.0 - a) * dv;
                }
                (sn, sv)
            })
            .collect();
        let (nn, validity) = partial.iter().fold((0.0, 0.0), |acc, x| (acc.0 + x.0, acc.1 + x.1));
        LossTerms {
            nn,
            validity,
            total: nn + self.lambda * validity,
        }
    }

    /// Nearest RS patch for every output patch. In approximate mode an old
    /// assignment is kept unless the new candidate is strictly closer, so the
    /// NN term never grows.
    pub fn assign(&mut self, index: &PatchIndex, row_window: Option<usize>) {
        let cur = self.patches(&self.current);
        let rs = index.patches();
        let exact = matches!(index.mode(), NnMode::Exact);
        let old = std::mem::take(&mut self.assignment);
        self.assignment = (0..cur.len())
            .into_par_iter()
            .map(|p| {
                let q = cur.patch(p);
                let found = match row_window {
                    None => index.nearest(q).index,
                    Some(win) => {
                        let row = cur.coord(p).row;
                        index
                            .nearest_filtered(q, |i| rs.coord(i).row.abs_diff(row) > win)
                            .map(|n| n.index)
                            .unwrap_or_else(|| index.nearest(q).index)
                    }
                };
                match old.get(p) {
                    Some(&prev) if !exact || row_window.is_some() => {
                        let dp = crate::patches::distance2(q, rs.patch(prev));
                        let df = crate::patches::distance2(q, rs.patch(found));
                        if df < dp {
                            found
                        } else {
                            prev
                        }
                    }
                    _ => found,
                }
            })
            .collect();
    }

    /// Per-pixel sums over the patches covering each pixel, frame-major.
    fn moments(&self, rs: &PatchSet) -> Vec<Moments> {
        let (w, h, k) = (self.width, self.height, self.frames());
        let xs = w - PATCH_W + 1;
        let ts = k - PATCH_T + 1;
        // Rows are independent: patches never span rows.
        let rows: Vec<Vec<Moments>> = (0..h)
            .into_par_iter()
            .map(|y| {
                let mut acc = vec![Moments::default(); k * w];
                for t in 0..ts {
                    for x in 0..xs {
                        let p = (y * ts + t) * xs + x;
                        let a = self.alpha[p];
                        let r = rs.patch(self.assignment[p]);
                        for dt in 0..PATCH_T {
                            for dx in 0..PATCH_W {
                                let v = r[dt * PATCH_W + dx] as f64;
                                let m = &mut acc[(t + dt) * w + x + dx];
                                m.a += a;
                                m.ar += a * v;
                                m.arr += a * v * v;
                                m.b += 1.0 - a;
                            }
                        }
                    }
                }
                acc
            })
            .collect();
        let mut out = vec![Moments::default(); k * w * h];
        for (y, acc) in rows.iter().enumerate() {
            for t in 0..k {
                let dst = t * w * h + y * w;
                out[dst..dst + w].copy_from_slice(&acc[t * w..(t + 1) * w]);
            }
        }
        out
    }

    /// Exact minimizer of the loss in the pixels for the current assignment,
    /// with validity weight `lambda`.
    pub fn solve(&self, rs: &PatchSet, lambda: f64) -> Vec<Vec<f32>> {
        let hw = self.width * self.height;
        let m = self.moments(rs);
        let mut out = self.current.clone();
        for (t, plane) in out.iter_mut().enumerate() {
            for (i, v) in plane.iter_mut().enumerate() {
                let g0 = self.initial[t][i] as f64;
                if let Some(g) = m[t * hw + i].optimum(g0, lambda) {
                    *v = g as f32;
                }
            }
        }
        out
    }

    /// `L_NN / (λ·L_validity)` right after a pixel solve with weight `lambda`,
    /// evaluated in closed form from the moments.
    fn solved_ratio(&self, m: &[Moments], lambda: f64) -> f64 {
        let hw = self.width * self.height;
        let (mut nn, mut val) = (0.0f64, 0.0f64);
        for (j, mo) in m.iter().enumerate() {
            let g0 = self.initial[j / hw][j % hw] as f64;
            let g = mo.optimum(g0, lambda).unwrap_or(g0);
            nn += mo.a * g * g - 2.0 * g * mo.ar + mo.arr;
            val += mo.b * (g - g0) * (g - g0);
        }
        nn / (lambda * val)
    }

    /// Searches `lambda · 10^[-6, 6]` for a weight whose first solve balances
    /// the two terms within [`BALANCE_LIMIT`]. With `largest` the biggest such
    /// weight wins; otherwise `lambda` itself if balanced, else the nearest
    /// balanced weight. Without any balanced weight, the ratio closest to one.
    fn balance_lambda(&self, rs: &PatchSet, lambda: f64, largest: bool) -> f64 {
        if !(lambda.is_finite() && lambda > 0.0) {
            return lambda;
        }
        let m = self.moments(rs);
        let score = |l: f64| {
            let r = self.solved_ratio(&m, l).ln();
            if r.is_finite() {
                r
            } else {
                f64::INFINITY
            }
        };
        // A small margin keeps the f32 round trip of the solved pixels inside the band.
        let limit = (BALANCE_LIMIT / BALANCE_MARGIN).ln();
        let inside = |l: f64| score(l).abs() <= limit;
        if !largest && inside(lambda) {
            return lambda;
        }
        let at = |i: i32| lambda * 10f64.powf(i as f64 / GRID_STEPS as f64);
        let scores: Vec<(i32, f64)> = (-GRID_SPAN..=GRID_SPAN).map(|i| (i, score(at(i)))).collect();
        let balanced = scores.iter().filter(|s| s.1.abs() <= limit).map(|s| s.0);
        let pick = if largest {
            balanced.max()
        } else {
            balanced.min_by_key(|&i| (i.abs(), i))
        };
        let Some(best) = pick else {
            let &(best, _) = scores
                .iter()
                .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(a.0.abs().cmp(&b.0.abs())))
                .expect("non-empty grid");
            return at(best);
        };
        // Bisect out to the edge of the band: upward for `largest`, else back toward `lambda`.
        let toward = if largest { best + 1 } else { best - best.signum() };
        if toward.abs() > GRID_SPAN {
            return at(best);
        }
        let (mut lo, mut hi) = (at(best).ln(), at(toward).ln());
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if inside(mid.exp()) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo.exp()
    }
}

pub struct RefineOutcome {
    pub clip: VideoClip,
    pub state: RefineState,
}

fn check_inputs(gs_initial: &VideoClip, rs: &VideoClip) -> Result<()> {
    if gs_initial.width() != rs.width() || gs_initial.height() != rs.height() || gs_initial.channels() != rs.channels()
    {
        return Err(Error::Dimension(format!(
            "GS is {}x{}x{}, RS is {}x{}x{}",
            gs_initial.width(),
            gs_initial.height(),
            gs_initial.channels(),
            rs.width(),
            rs.height(),
            rs.channels()
        )));
    }
    if gs_initial.len() < PATCH_T {
        return Err(Error::TooSmall(format!(
            "refinement needs at least {PATCH_T} frames, got {}",
            gs_initial.len()
        )));
    }
    Ok(())
}

/// Refined clip: luma optimized, chroma of the initial estimate kept.
pub fn refine(gs_initial: &VideoClip, rs: &VideoClip, cfg: &RefineConfig) -> Result<VideoClip> {
    Ok(refine_with_state(gs_initial, rs, cfg)?.clip)
}

pub fn refine_with_state(gs_initial: &VideoClip, rs: &VideoClip, cfg: &RefineConfig) -> Result<RefineOutcome> {
    check_inputs(gs_initial, rs)?;
    cfg.validate()?;
    let index = build_patch_index(rs, cfg.nn_mode)?;
    refine_with_index(gs_initial, &index, cfg)
}

/// [`refine_with_state`] against a prebuilt index.
pub fn refine_with_index(gs_initial: &VideoClip, index: &PatchIndex, cfg: &RefineConfig) -> Result<RefineOutcome> {
    cfg.validate()?;
    let rs = index.patches();
    if rs.width != gs_initial.width() || rs.height != gs_initial.height() {
        return Err(Error::Dimension("patch index and GS clip differ in size".into()));
    }
    if gs_initial.len() < PATCH_T {
        return Err(Error::TooSmall(format!(
            "refinement needs at least {PATCH_T} frames, got {}",
            gs_initial.len()
        )));
    }
    let initial = luma_planes(gs_initial);
    let mut state = RefineState {
        width: gs_initial.width(),
        height: gs_initial.height(),
        current: initial.clone(),
        initial,
        assignment: Vec::new(),
        alpha: compute_alpha(gs_initial, cfg)?,
        lambda: 0.0,
        trace: Vec::new(),
    };
    if cfg.iterations == 0 {
        return Ok(RefineOutcome {
            clip: gs_initial.clone(),
            state,
        });
    }

    state.assign(index, cfg.row_window);
    state.lambda = match cfg.lambda {
        Lambda::Fixed(l) => l,
        Lambda::Auto | Lambda::Ratio => {
            let l_nn = state.loss(rs).nn;
            let mut probe = state.clone();
            probe.current = state.solve(rs, 0.0);
            let l_val = probe.loss(rs).validity;
            state.balance_lambda(rs, l_nn / l_val.max(LAMBDA_EPS), cfg.lambda == Lambda::Auto)
        }
    };
    let start = state.loss(rs);
    state.trace.push(start);
    log::debug!("refine: lambda = {:.6e}, initial loss {:?}", state.lambda, start);
    if start.total == 0.0 {
        return Ok(RefineOutcome {
            clip: gs_initial.clone(),
            state,
        });
    }

    let mut prev = start.total;
    for it in 0..cfg.iterations {
        if it > 0 {
            state.assign(index, cfg.row_window);
            check_monotone(prev, state.loss(rs).total, "NN reassignment")?;
        }
        state.current = state.solve(rs, state.lambda);
        let terms = state.loss(rs);
        check_monotone(prev, terms.total, "pixel solve")?;
        state.trace.push(terms);
        log::debug!("refine: iteration {} loss {:?}", it + 1, terms);
        let drop = (prev - terms.total) / prev;
        prev = terms.total;
        if prev == 0.0 || drop < EARLY_EXIT {
            break;
        }
    }

    let frames = gs_initial
        .frames
        .iter()
        .zip(&state.current)
        .zip(&state.initial)
        .map(|((f, cur), init)| apply_luma_delta(f, cur, init))
        .collect();
    Ok(RefineOutcome {
        clip: VideoClip {
            frames,
            ..gs_initial.clone()
        },
        state,
    })
}

fn check_monotone(prev: f64, next: f64, step: &str) -> Result<()> {
    if next > prev + MONOTONE_SLACK * prev.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::Invariant(format!(
            "refinement loss rose from {prev:.12e} to {next:.12e} in {step}"
        )));
    }
    Ok(())
}

/// Adds the luma change to every channel, which leaves chroma untouched.
fn apply_luma_delta(frame: &Image, new_luma: &[f32], old_luma: &[f32]) -> Image {
    let mut out = frame.clone();
    for c in 0..out.channels() {
        for ((v, n), o) in out.plane_mut(c).iter_mut().zip(new_luma).zip(old_luma) {
            *v = if frame.channels() == 1 { *n } else { *v + (n - o) };
        }
    }
    out.clamp01();
    out
}

/// `L_NN / (λ·L_validity)` for a trace entry.
pub fn term_ratio(terms: &LossTerms, lambda: f64) -> f64 {
    terms.nn / (lambda * terms.validity)
}
