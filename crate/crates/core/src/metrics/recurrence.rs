//! Cross-video xt-patch recurrence.
//!
//! For every GS xt-patch `p`, `d_GS` is the distance to its nearest GS patch
//! that shares no pixel with `p`, and `d_RS` the distance to its nearest patch
//! anywhere in the RS clip. `r = d_RS / max(d_GS, ε)` near 1 means the RS
//! clip explains the GS patches about as well as the GS clip itself does.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patches::{NnMode, PatchIndex, PatchSet, PATCH_T, PATCH_W};
use crate::volume::VideoClip;

pub const RATIO_EPS: f64 = 1e-6;
/// Fraction of patches (by gradient energy) the headline statistics cover.
pub const TOP_FRACTION: f64 = 0.25;
/// Gradient energy below which a clip counts as textureless.
const DEGENERATE_GRADIENT: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceStats {
    /// Mean ratio over all patches.
    pub mean_ratio_all: f64,
    /// Mean ratio over the top-gradient patches.
    pub mean_ratio: f64,
    /// `(q, r_q)` quantiles over the top-gradient patches.
    pub quantiles: Vec<(f64, f64)>,
    pub frac_le_1_1: f64,
    pub frac_le_1_5: f64,
    pub patch_count: usize,
    pub top_count: usize,
    /// Set when the GS clip is (near) constant and the ratios mean nothing.
    pub unreliable: bool,
}

/// Per-patch distances behind [`RecurrenceStats`].
#[derive(Clone, Debug)]
pub struct PatchRatios {
    pub d_gs: Vec<f64>,
    pub d_rs: Vec<f64>,
    pub gradient: Vec<f64>,
}

impl PatchRatios {
    pub fn ratio(&self, i: usize) -> f64 {
        self.d_rs[i] / self.d_gs[i].max(RATIO_EPS)
    }
}

/// Sum over each patch of the xt-slice gradient magnitude (central differences).
fn patch_gradients(set: &PatchSet, luma: &[Vec<f32>]) -> Vec<f64> {
    let (w, k) = (set.width, set.frames);
    (0..set.len())
        .map(|i| {
            let c = set.coord(i);
            let mut g = 0.0;
            for dt in 0..PATCH_T {
                let t = c.t + dt;
                for dx in 0..PATCH_W {
                    let x = c.x + dx;
                    let at = |x: usize, t: usize| luma[t][c.row * w + x] as f64;
                    let gx = (at((x + 1).min(w - 1), t) - at(x.saturating_sub(1), t)) * 0.5;
                    let gt = (at(x, (t + 1).min(k - 1)) - at(x, t.saturating_sub(1))) * 0.5;
                    g += (gx * gx + gt * gt).sqrt();
                }
            }
            g
        })
        .collect()
}

pub fn patch_ratios(gs: &VideoClip, rs: &VideoClip, mode: NnMode) -> Result<PatchRatios> {
    gs.check_compatible(rs)?;
    let gs_set = PatchSet::from_clip(gs)?;
    let rs_set = PatchSet::from_clip(rs)?;
    let luma: Vec<Vec<f32>> = gs.frames.iter().map(|f| f.luma().into_vec()).collect();
    let gradient = patch_gradients(&gs_set, &luma);
    let gs_index = PatchIndex::build(gs_set, mode);
    let rs_index = PatchIndex::build(rs_set, mode);
    let set = gs_index.patches();
    let (d_gs, d_rs): (Vec<f64>, Vec<f64>) = (0..set.len())
        .into_par_iter()
        .map(|i| {
            let me = set.coord(i);
            let p = set.patch(i);
            let internal = gs_index
                .nearest_filtered(p, |j| set.coord(j).overlaps(&me))
                .map(|n| n.dist2.sqrt())
                .unwrap_or(f64::INFINITY);
            let cross = rs_index.nearest(p).dist2.sqrt();
            (internal, cross)
        })
        .unzip();
    Ok(PatchRatios { d_gs, d_rs, gradient })
}

pub fn recurrence_stats(gs: &VideoClip, rs: &VideoClip) -> Result<RecurrenceStats> {
    recurrence_stats_with(gs, rs, NnMode::Exact)
}

pub fn recurrence_stats_with(gs: &VideoClip, rs: &VideoClip, mode: NnMode) -> Result<RecurrenceStats> {
    if gs.len() < PATCH_T || rs.len() < PATCH_T {
        return Err(Error::TooSmall("recurrence statistics need >= 3 frames".into()));
    }
    let pr = patch_ratios(gs, rs, mode)?;
    Ok(summarize(&pr))
}

pub fn summarize(pr: &PatchRatios) -> RecurrenceStats {
    let m = pr.d_gs.len();
    let ratios: Vec<f64> = (0..m).map(|i| pr.ratio(i)).collect();
    let mut order: Vec<usize> = (0..m).collect();
    // Highest gradient first; index breaks ties for determinism.
    order.sort_by(|&a, &b| pr.gradient[b].total_cmp(&pr.gradient[a]).then(a.cmp(&b)));
    let top_count = ((m as f64 * TOP_FRACTION).ceil() as usize).clamp(1.min(m), m);
    let mut top: Vec<f64> = order[..top_count].iter().map(|&i| ratios[i]).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let frac = |v: &[f64], limit: f64| v.iter().filter(|&&r| r <= limit).count() as f64 / v.len().max(1) as f64;
    let mean_ratio = mean(&top);
    let frac_le_1_1 = frac(&top, 1.1);
    let frac_le_1_5 = frac(&top, 1.5);
    top.sort_by(f64::total_cmp);
    let quantiles = [0.1, 0.25, 0.5, 0.75, 0.9]
        .iter()
        .map(|&q| {
            let pos = ((top.len().max(1) - 1) as f64 * q).round() as usize;
            (q, top.get(pos).copied().unwrap_or(f64::NAN))
        })
        .collect();
    let max_grad = pr.gradient.iter().copied().fold(0.0, f64::max);
    RecurrenceStats {
        mean_ratio_all: mean(&ratios),
        mean_ratio,
        quantiles,
        frac_le_1_1,
        frac_le_1_5,
        patch_count: m,
        top_count,
        unreliable: max_grad < DEGENERATE_GRADIENT,
    }
}
