//! Stage plumbing shared by `unroll` and the per-stage subcommands.
//!
//! Every stage output is quantized to the artifact bit depth before the next
//! stage consumes it, so re-running a stage on its on-disk inputs reproduces
//! the end-to-end result exactly.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use rsunroll::ensemble::{merge, Augmentation, MergeWeights, ProposalSet};
use rsunroll::interp::{propose_clip, Interpolator, ReconstructOptions};
use rsunroll::io::{read_clip, write_clip, BitDepth};
use rsunroll::refine::{refine_with_state, RefineConfig};
use rsunroll::{Image, Shutter, VideoClip};

pub const PROPOSALS: &str = "proposals";
pub const MEAN: &str = "mean";
pub const MERGED: &str = "merged";
pub const REFINED: &str = "refined";
pub const OUTPUT: &str = "gs";

pub fn aug_dir(root: &Path, id: usize) -> PathBuf {
    root.join(format!("aug_{id:02}"))
}

fn quantized(frames: impl IntoIterator<Item = Image>, depth: BitDepth, rows: usize) -> Result<VideoClip> {
    let frames: Vec<Image> = frames.into_iter().map(|f| f.quantize(depth.bits())).collect();
    let mut clip = VideoClip::new(frames, Shutter::Global)?;
    clip.rows = rows;
    Ok(clip)
}

pub fn read_rs(dir: &Path) -> Result<VideoClip> {
    let rs = read_clip(dir).with_context(|| format!("reading RS clip {}", dir.display()))?;
    if rs.shutter != Shutter::Rolling {
        return Err(rsunroll::Error::Config(format!("{} is not a rolling-shutter clip", dir.display())).into());
    }
    Ok(rs)
}

/// Proposals for all 16 augmentations, one GS clip (times 1..K) per augmentation.
pub fn proposals(
    rs: &VideoClip,
    interp: &dyn Interpolator,
    opts: &ReconstructOptions,
    depth: BitDepth,
) -> Result<Vec<VideoClip>> {
    Augmentation::all()
        .map(|aug| {
            info!("proposals: augmentation {}", aug.id());
            let props = propose_clip(rs, aug, interp, opts)?;
            quantized(props.into_iter().map(|p| p.frame), depth, rs.rows)
        })
        .collect()
}

pub fn write_proposals(root: &Path, clips: &[VideoClip], depth: BitDepth) -> Result<()> {
    for (id, clip) in clips.iter().enumerate() {
        write_clip(&aug_dir(root, id), clip, depth)?;
    }
    Ok(())
}

pub fn read_proposals(root: &Path) -> Result<Vec<VideoClip>> {
    let clips: Vec<VideoClip> = (0..Augmentation::COUNT)
        .map(|id| read_clip(&aug_dir(root, id)))
        .collect::<rsunroll::Result<_>>()?;
    let len = clips[0].len();
    if clips
        .iter()
        .any(|c| c.len() != len || c.check_compatible(&clips[0]).is_err())
    {
        bail!(rsunroll::Error::Dimension(format!(
            "proposal clips under {} disagree in shape",
            root.display()
        )));
    }
    Ok(clips)
}

fn proposal_sets(clips: &[VideoClip]) -> Result<Vec<ProposalSet>> {
    (0..clips[0].len())
        .map(|t| {
            Ok(ProposalSet::new(
                t + 1,
                clips.iter().map(|c| c.frames[t].clone()).collect(),
            )?)
        })
        .collect()
}

/// Mean and merged clips. Without weights the merge is the mean itself.
pub fn merge_stage(
    clips: &[VideoClip],
    weights: Option<&MergeWeights>,
    depth: BitDepth,
) -> Result<(VideoClip, VideoClip)> {
    let rows = clips[0].rows;
    let sets = proposal_sets(clips)?;
    let mean = quantized(sets.iter().map(|s| s.mean.clone()), depth, rows)?;
    let merged = match weights {
        None => mean.clone(),
        Some(w) => {
            let frames = sets.iter().map(|s| merge(s, w)).collect::<rsunroll::Result<Vec<_>>>()?;
            quantized(frames, depth, rows)?
        }
    };
    Ok((mean, merged))
}

pub fn refine_stage(gs: &VideoClip, rs: &VideoClip, cfg: &RefineConfig, depth: BitDepth) -> Result<VideoClip> {
    let out = refine_with_state(gs, rs, cfg)?;
    for (i, t) in out.state.trace.iter().enumerate() {
        info!(
            "refine: iteration {i} loss={:.6e} nn={:.6e} validity={:.6e}",
            t.total, t.nn, t.validity
        );
    }
    info!("refine: lambda={:.6e}", out.state.lambda);
    quantized(out.clip.frames, depth, rs.rows)
}

pub struct UnrollPlan<'a> {
    pub interp: &'a dyn Interpolator,
    pub options: ReconstructOptions,
    pub weights: Option<MergeWeights>,
    pub refine: Option<RefineConfig>,
    pub depth: BitDepth,
}

/// Full pipeline; writes every stage under `out` and returns the final clip.
pub fn unroll(rs: &VideoClip, plan: &UnrollPlan, out: &Path) -> Result<VideoClip> {
    let props = proposals(rs, plan.interp, &plan.options, plan.depth)?;
    write_proposals(&out.join(PROPOSALS), &props, plan.depth)?;
    let (mean, merged) = merge_stage(&props, plan.weights.as_ref(), plan.depth)?;
    write_clip(&out.join(MEAN), &mean, plan.depth)?;
    write_clip(&out.join(MERGED), &merged, plan.depth)?;
    let last = match &plan.refine {
        Some(cfg) => {
            let refined = refine_stage(&merged, rs, cfg, plan.depth)?;
            write_clip(&out.join(REFINED), &refined, plan.depth)?;
            refined
        }
        None => merged,
    };
    write_clip(&out.join(OUTPUT), &last, plan.depth)?;
    Ok(last)
}
