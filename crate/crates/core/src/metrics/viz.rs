//! Green/magenta misalignment composites.

use crate::error::Result;
use crate::image::Image;
use crate::volume::{Shutter, VideoClip};

/// Ground truth goes to red and blue, prediction to green: aligned pixels come
/// out gray, misaligned ones green or magenta.
pub fn misalignment_frame(gt: &Image, pred: &Image) -> Result<Image> {
    gt.check_same_shape(pred)?;
    let g = gt.luma();
    let p = pred.luma();
    Image::from_planes(&[g.clone(), p, g])
}

pub fn misalignment_viz(gt: &VideoClip, pred: &VideoClip) -> Result<VideoClip> {
    gt.check_compatible(pred)?;
    let frames = gt
        .frames
        .iter()
        .zip(&pred.frames)
        .map(|(g, p)| misalignment_frame(g, p))
        .collect::<Result<Vec<_>>>()?;
    VideoClip::new(frames, Shutter::Global)
}
