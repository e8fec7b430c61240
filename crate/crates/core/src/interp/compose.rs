use std::borrow::Cow;

use rayon::prelude::*;

use crate::augment::Augmentation;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::volume::{Shutter, VideoClip};

use super::{Interpolator, PairContext};

/// Index of the upsampled frame that supplies output row `j`.
pub fn source_index(j: usize, height: usize, n: usize) -> usize {
    if height == n {
        n - j
    } else {
        ((1.0 - j as f64 / height as f64) * n as f64).round() as usize
    }
}

/// Snaps `m` to the nearest index on the `stride` grid, always keeping `n`.
pub fn strided_index(m: usize, n: usize, stride: usize) -> usize {
    if stride <= 1 || m >= n {
        return m.min(n);
    }
    let lo = m / stride * stride;
    let hi = (lo + stride).min(n);
    if m - lo <= hi - m {
        lo
    } else {
        hi
    }
}

/// Upsampled-frame index for every output row.
pub fn row_plan(height: usize, n: usize, stride: usize) -> Vec<usize> {
    (0..height)
        .map(|j| strided_index(source_index(j, height, n), n, stride))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProposalSource {
    Interpolator(String),
    Augmentation(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GSProposal {
    pub frame: Image,
    /// Output time: the top-row time of the later RS frame.
    pub time: usize,
    pub source: ProposalSource,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReconstructOptions {
    /// Interpolate only every `stride`-th offset and reuse the nearest one for
    /// the rows in between. 1 means full density.
    pub stride: usize,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        Self { stride: 1 }
    }
}

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Config(format!("upsampling factor must be >= 2, got {n}")));
    }
    Ok(())
}

/// Frames `F_0..F_N` between `a` and `b`, with `F_m` at fraction `m/N`.
pub fn upsample_pair(
    a: &Image,
    b: &Image,
    n: usize,
    interp: &dyn Interpolator,
    ctx: &PairContext,
) -> Result<Vec<Image>> {
    check_n(n)?;
    let fractions: Vec<f64> = (1..n).map(|m| m as f64 / n as f64).collect();
    let mut frames = interp.begin_pair(a, b, &fractions, ctx)?;
    let mut out = Vec::with_capacity(n + 1);
    out.push(a.clone());
    for i in 0..fractions.len() {
        out.push(frames.frame(i)?);
    }
    out.push(b.clone());
    Ok(out)
}

/// Builds a GS frame by taking each row from its upsampled frame.
pub fn compose_gs(upsampled: &[Image], n: usize) -> Result<Image> {
    check_n(n)?;
    if upsampled.len() != n + 1 {
        return Err(Error::Dimension(format!(
            "composition needs {} frames, got {}",
            n + 1,
            upsampled.len()
        )));
    }
    let first = &upsampled[0];
    if upsampled.iter().any(|f| !f.same_shape(first)) {
        return Err(Error::Dimension("upsampled frames differ in shape".into()));
    }
    let mut out = Image::new(first.width(), first.height(), first.channels());
    for (j, m) in row_plan(first.height(), n, 1).into_iter().enumerate() {
        out.copy_row_from(j, &upsampled[m], j);
    }
    Ok(out)
}

/// One proposal for original pair `(p, p+1)` of `rs`, interpolating in the
/// augmented clip and mapping back. Interpolated frames are produced one at a
/// time and dropped once their rows are copied.
fn compose_pair(
    rs: &VideoClip,
    augmented: &VideoClip,
    aug: Augmentation,
    p: usize,
    interp: &dyn Interpolator,
    opts: &ReconstructOptions,
) -> Result<Image> {
    let (k, n, h) = (rs.len(), rs.rows, rs.height());
    check_n(n)?;
    let plan = row_plan(h, n, opts.stride);
    let mut interior: Vec<usize> = plan.iter().copied().filter(|&m| m > 0 && m < n).collect();
    interior.sort_unstable();
    interior.dedup();
    let (ap, fractions): (usize, Vec<f64>) = if aug.time_reverse {
        (k - 2 - p, interior.iter().map(|&m| (n - m) as f64 / n as f64).collect())
    } else {
        (p, interior.iter().map(|&m| m as f64 / n as f64).collect())
    };
    let ctx = PairContext {
        pair: ap,
        augmentation: aug,
        clip_len: k,
    };
    let mut frames = if interior.is_empty() {
        None
    } else {
        Some(interp.begin_pair(&augmented.frames[ap], &augmented.frames[ap + 1], &fractions, &ctx)?)
    };

    let (a, b) = (&rs.frames[p], &rs.frames[p + 1]);
    let mut out = Image::new(a.width(), a.height(), a.channels());
    let mut ms: Vec<usize> = plan.clone();
    ms.sort_unstable();
    ms.dedup();
    for m in ms {
        let src: Cow<Image> = if m == 0 {
            Cow::Borrowed(a)
        } else if m == n {
            Cow::Borrowed(b)
        } else {
            let idx = interior.binary_search(&m).expect("interior index planned");
            let f = frames.as_mut().expect("frames requested").frame(idx)?;
            let f = if aug == Augmentation::IDENTITY {
                f
            } else {
                aug.inverse_spatial(&f)
            };
            if !f.same_shape(a) {
                return Err(Error::Dimension(format!(
                    "interpolator returned {}x{}x{}, expected {}x{}x{}",
                    f.width(),
                    f.height(),
                    f.channels(),
                    a.width(),
                    a.height(),
                    a.channels()
                )));
            }
            Cow::Owned(f)
        };
        for (j, _) in plan.iter().enumerate().filter(|(_, &pm)| pm == m) {
            out.copy_row_from(j, &src, j);
        }
    }
    Ok(out)
}

fn check_rs(rs: &VideoClip) -> Result<()> {
    if rs.shutter != Shutter::Rolling {
        return Err(Error::Config("reconstruction expects a rolling-shutter clip".into()));
    }
    if rs.len() < 2 {
        return Err(Error::TooSmall(format!(
            "reconstruction needs at least 2 frames, got {}",
            rs.len()
        )));
    }
    Ok(())
}

/// Proposals for output times `1..K` from one augmentation of `rs`.
pub fn propose_clip(
    rs: &VideoClip,
    aug: Augmentation,
    interp: &dyn Interpolator,
    opts: &ReconstructOptions,
) -> Result<Vec<GSProposal>> {
    check_rs(rs)?;
    let augmented = if aug == Augmentation::IDENTITY {
        Cow::Borrowed(rs)
    } else {
        Cow::Owned(aug.apply(rs))
    };
    let one = |p: usize| -> Result<GSProposal> {
        Ok(GSProposal {
            frame: compose_pair(rs, &augmented, aug, p, interp, opts)?,
            time: p + 1,
            source: if aug == Augmentation::IDENTITY {
                ProposalSource::Interpolator(interp.name().to_string())
            } else {
                ProposalSource::Augmentation(aug.id())
            },
        })
    };
    let pairs = 0..rs.len() - 1;
    if interp.capabilities().concurrent {
        pairs.into_par_iter().map(one).collect()
    } else {
        pairs.map(one).collect()
    }
}

/// GS clip for output times `1..K`. The first GS instant would need
/// extrapolation before RS frame 0 and is dropped.
pub fn reconstruct_clip(rs: &VideoClip, interp: &dyn Interpolator) -> Result<VideoClip> {
    reconstruct_clip_with(rs, interp, &ReconstructOptions::default())
}

pub fn reconstruct_clip_with(
    rs: &VideoClip,
    interp: &dyn Interpolator,
    opts: &ReconstructOptions,
) -> Result<VideoClip> {
    let frames = propose_clip(rs, Augmentation::IDENTITY, interp, opts)?
        .into_iter()
        .map(|p| p.frame)
        .collect();
    VideoClip::new(frames, Shutter::Global)
}
