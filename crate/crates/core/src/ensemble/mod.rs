//! Sixteen GS proposals per output time and their learned merge.
//!
//! Each proposal comes from running the interpolation stage on one
//! time/rotation/flip augmentation of the RS clip and undoing the augmentation
//! before rows are composed. The merge adds a small CNN's residual to the
//! proposal mean.

mod merge;
pub mod weights;

pub use merge::{merge, merge_mean, merge_unclamped, residual};
pub use weights::{ConvLayer, MergeWeights};

pub use crate::augment::Augmentation;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::interp::{propose_clip, Interpolator, ReconstructOptions};
use crate::volume::VideoClip;

/// The 16 proposals for one output time, indexed by augmentation id.
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalSet {
    pub time: usize,
    pub proposals: Vec<Image>,
    pub mean: Image,
}

/// Per-pixel mean, accumulated in f64.
pub fn mean_image(images: &[Image]) -> Result<Image> {
    let first = images
        .first()
        .ok_or_else(|| Error::TooSmall("mean of zero images".into()))?;
    let mut acc = vec![0.0f64; first.data().len()];
    for img in images {
        img.check_same_shape(first)?;
        for (a, v) in acc.iter_mut().zip(img.data()) {
            *a += *v as f64;
        }
    }
    let n = images.len() as f64;
    Image::from_vec(
        first.width(),
        first.height(),
        first.channels(),
        acc.into_iter().map(|a| (a / n) as f32).collect(),
    )
}

impl ProposalSet {
    pub fn new(time: usize, proposals: Vec<Image>) -> Result<Self> {
        if proposals.len() != Augmentation::COUNT {
            return Err(Error::Dimension(format!(
                "expected {} proposals, got {}",
                Augmentation::COUNT,
                proposals.len()
            )));
        }
        let mean = mean_image(&proposals)?;
        Ok(Self { time, proposals, mean })
    }

    /// Per-pixel standard deviation across proposals, averaged over channels.
    pub fn spread(&self) -> Image {
        let (w, h, ch) = (self.mean.width(), self.mean.height(), self.mean.channels());
        let n = self.proposals.len() as f64;
        let hw = w * h;
        let mut out = vec![0.0f32; hw];
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = 0.0f64;
            for c in 0..ch {
                let m = self.mean.plane(c)[i] as f64;
                let var: f64 = self
                    .proposals
                    .iter()
                    .map(|p| (p.plane(c)[i] as f64 - m).powi(2))
                    .sum::<f64>()
                    / n;
                s += var.sqrt();
            }
            *o = (s / ch as f64) as f32;
        }
        Image::from_vec(w, h, 1, out).expect("sized from mean")
    }
}

pub fn apply_augmentation(clip: &VideoClip, aug: Augmentation) -> VideoClip {
    aug.apply(clip)
}

/// One [`ProposalSet`] per output time `1..K`.
pub fn propose_all(rs: &VideoClip, interp: &dyn Interpolator) -> Result<Vec<ProposalSet>> {
    propose_all_with(rs, interp, &ReconstructOptions::default())
}

pub fn propose_all_with(
    rs: &VideoClip,
    interp: &dyn Interpolator,
    opts: &ReconstructOptions,
) -> Result<Vec<ProposalSet>> {
    let mut by_time: Vec<Vec<Image>> = vec![Vec::with_capacity(Augmentation::COUNT); rs.len().saturating_sub(1)];
    for aug in Augmentation::all() {
        log::debug!("proposals for augmentation {}", aug.id());
        for p in propose_clip(rs, aug, interp, opts)? {
            by_time[p.time - 1].push(p.frame);
        }
    }
    by_time
        .into_iter()
        .enumerate()
        .map(|(i, props)| ProposalSet::new(i + 1, props))
        .collect()
}
