use crate::error::{Error, Result};
use crate::image::Image;

use super::weights::{ConvLayer, MergeWeights, KERNEL_SIZE};
use super::ProposalSet;

/// Lays out the 3×3 zero-padded neighborhoods of `input` (planar, `cin`
/// planes) as a `(cin·9) × (w·h)` row-major matrix.
fn im2col(input: &[f32], cin: usize, w: usize, h: usize) -> Vec<f32> {
    let hw = w * h;
    let mut cols = vec![0.0f32; cin * 9 * hw];
    for i in 0..cin {
        let plane = &input[i * hw..(i + 1) * hw];
        for ky in 0..KERNEL_SIZE {
            for kx in 0..KERNEL_SIZE {
                let r = (i * 9 + ky * 3 + kx) * hw;
                let dst = &mut cols[r..r + hw];
                for y in 0..h {
                    let yy = y as isize + ky as isize - 1;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    let src = &plane[yy as usize * w..(yy as usize + 1) * w];
                    let drow = &mut dst[y * w..(y + 1) * w];
                    match kx {
                        0 => drow[1..].copy_from_slice(&src[..w - 1]),
                        1 => drow.copy_from_slice(src),
                        _ => drow[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
    cols
}

fn conv(layer: &ConvLayer, input: &[f32], w: usize, h: usize, relu: bool) -> Vec<f32> {
    let hw = w * h;
    let k = layer.in_channels * 9;
    let cols = im2col(input, layer.in_channels, w, h);
    let mut out = vec![0.0f32; layer.out_channels * hw];
    // SAFETY: the slices hold exactly m·k, k·n and m·n elements with the
    // row-major strides passed here.
    unsafe {
        matrixmultiply::sgemm(
            layer.out_channels,
            k,
            hw,
            1.0,
            layer.kernel.as_ptr(),
            k as isize,
            1,
            cols.as_ptr(),
            hw as isize,
            1,
            0.0,
            out.as_mut_ptr(),
            hw as isize,
            1,
        );
    }
    for (o, plane) in out.chunks_exact_mut(hw).enumerate() {
        let b = layer.bias[o];
        for v in plane {
            *v += b;
            if relu && *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    out
}

/// The CNN's residual for stacked proposals, planar `C × H × W`.
pub fn residual(weights: &MergeWeights, stacked: &[f32], w: usize, h: usize) -> Vec<f32> {
    let last = weights.layers.len() - 1;
    let mut x = stacked.to_vec();
    for (l, layer) in weights.layers.iter().enumerate() {
        let relu = l < last || weights.relu_head;
        x = conv(layer, &x, w, h, relu);
    }
    x
}

fn check_compatible(set: &ProposalSet, weights: &MergeWeights) -> Result<()> {
    let c = set.mean.channels();
    let want_in = set.proposals.len() * c;
    if weights.input_channels() != want_in || weights.output_channels() != c {
        return Err(Error::Dimension(format!(
            "weights map {} -> {} channels, proposals need {} -> {}",
            weights.input_channels(),
            weights.output_channels(),
            want_in,
            c
        )));
    }
    Ok(())
}

/// `mean + CNN(proposals)`, clamped to `[0, 1]`.
pub fn merge(set: &ProposalSet, weights: &MergeWeights) -> Result<Image> {
    let mut out = merge_unclamped(set, weights)?;
    out.clamp01();
    Ok(out)
}

/// [`merge`] without the final clamp.
pub fn merge_unclamped(set: &ProposalSet, weights: &MergeWeights) -> Result<Image> {
    weights.validate()?;
    check_compatible(set, weights)?;
    let (w, h) = (set.mean.width(), set.mean.height());
    let stacked: Vec<f32> = set.proposals.iter().flat_map(|p| p.data().iter().copied()).collect();
    let res = residual(weights, &stacked, w, h);
    let mut out = set.mean.clone();
    for (o, r) in out.data_mut().iter_mut().zip(&res) {
        *o += r;
    }
    Ok(out)
}

/// The fallback used when no weights are given: the clamped proposal mean.
pub fn merge_mean(set: &ProposalSet) -> Image {
    let mut out = set.mean.clone();
    out.clamp01();
    out
}
