//! Temporal upsampling of RS frame pairs and composition of GS proposals.
//!
//! Between RS frames `k` and `k+1`, the frame at fraction `m/N` approximates
//! the slanted plane whose row `j` sits at time `k + (m + j)/N`. Taking row `j`
//! from `F_{N-j}` therefore lands every row at time `k+1`, which is the output
//! frame's timestamp. Row 0 comes straight from RS frame `k+1`.

mod builtin;
mod compose;
pub mod flow;
mod oracle;
pub mod plugin;

pub use builtin::{interpolate, interpolate_with_flows, BuiltinInterpolator};
pub use compose::{
    compose_gs, propose_clip, reconstruct_clip, reconstruct_clip_with, row_plan, source_index, strided_index,
    upsample_pair, GSProposal, ProposalSource, ReconstructOptions,
};
pub use flow::{estimate_flow, estimate_flow_pair, FlowField};
pub use oracle::OracleInterpolator;
pub use plugin::PluginInterpolator;

use crate::augment::Augmentation;
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Debug, PartialEq)]
pub struct Capabilities {
    /// Largest displacement handled reliably, in px. `None` if unbounded.
    pub max_displacement: Option<f64>,
    /// Most fractions per request. `None` if unbounded.
    pub max_batch: Option<usize>,
    /// Whether one instance may serve several workers at once.
    pub concurrent: bool,
}

/// Where a frame pair sits, for interpolators that need more than pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairContext {
    /// Index of the first frame of the pair in the (augmented) clip.
    pub pair: usize,
    pub augmentation: Augmentation,
    pub clip_len: usize,
}

impl PairContext {
    pub fn plain(pair: usize, clip_len: usize) -> Self {
        Self {
            pair,
            augmentation: Augmentation::IDENTITY,
            clip_len,
        }
    }
}

/// Frames for one pair, produced on demand in the order of the requested fractions.
pub trait PairFrames {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn frame(&mut self, index: usize) -> Result<Image>;
}

/// A temporal frame interpolator.
///
/// Implementations must return `a` exactly for fraction 0 and `b` exactly for
/// fraction 1.
pub trait Interpolator: Sync {
    fn name(&self) -> &str;

    fn capabilities(&self) -> Capabilities;

    /// Prepares interpolation of `fractions` between `a` and `b`. Motion
    /// estimation is shared by all fractions of a pair.
    fn begin_pair<'a>(
        &'a self,
        a: &'a Image,
        b: &'a Image,
        fractions: &[f64],
        ctx: &PairContext,
    ) -> Result<Box<dyn PairFrames + 'a>>;
}

pub(crate) fn check_fractions(fractions: &[f64]) -> Result<()> {
    match fractions.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        Some(t) => Err(Error::Range(format!("interpolation fraction {t} outside [0, 1]"))),
        None => Ok(()),
    }
}

/// Checks the interpolator contract on one pair: fractions 0 and 1 must
/// reproduce the endpoints exactly and every frame must match their shape.
///
/// Plugins receive 16-bit files, so pass endpoints already quantized to 16 bits.
pub fn check_conformance(interp: &dyn Interpolator, a: &Image, b: &Image) -> Result<()> {
    a.check_same_shape(b)?;
    let fractions = [0.0, 0.5, 1.0];
    let mut frames = interp.begin_pair(a, b, &fractions, &PairContext::plain(0, 2))?;
    if frames.len() != fractions.len() {
        return Err(Error::Invariant(format!(
            "{} answered {} of {} fractions",
            interp.name(),
            frames.len(),
            fractions.len()
        )));
    }
    for (i, want) in [(0, Some(a)), (1, None), (2, Some(b))] {
        let f = frames.frame(i)?;
        if !f.same_shape(a) {
            return Err(Error::Invariant(format!(
                "{} returned a {}x{}x{} frame for {}x{}x{} input",
                interp.name(),
                f.width(),
                f.height(),
                f.channels(),
                a.width(),
                a.height(),
                a.channels()
            )));
        }
        if let Some(w) = want {
            if &f != w {
                return Err(Error::Invariant(format!(
                    "{} breaks endpoint identity at fraction {} (max diff {})",
                    interp.name(),
                    fractions[i],
                    f.max_abs_diff(w)
                )));
            }
        }
    }
    Ok(())
}
