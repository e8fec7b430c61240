//! An interpolator that reads the true volume instead of estimating motion.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::volume::{row_at, GridTime, VolumeSource};

use super::{check_fractions, Capabilities, Interpolator, PairContext, PairFrames};

/// Returns the volume's slanted-plane sample at the requested fraction, so a
/// pipeline driven by it reproduces ground truth exactly when the volume's
/// oversampling is a multiple of `rows`.
///
/// Only vertical readout is modeled. Fractions must be multiples of `1/rows`.
pub struct OracleInterpolator {
    volume: Arc<dyn VolumeSource + Send>,
    rows: usize,
}

impl OracleInterpolator {
    pub fn new(volume: Arc<dyn VolumeSource + Send>, rows: usize) -> Result<Self> {
        if rows < 2 {
            return Err(Error::Config(format!("rows per frame must be >= 2, got {rows}")));
        }
        Ok(Self { volume, rows })
    }

    /// Slanted-plane sample starting at `offset / rows` frame periods.
    pub fn slanted_plane(&self, offset: usize) -> Result<Image> {
        let vol = self.volume.as_ref();
        let (w, h, ch) = (vol.width(), vol.height(), vol.channels());
        let last = GridTime::at(0, offset + h - 1, self.rows, vol.oversampling());
        if last.last_index() >= vol.stored_frames() {
            return Err(Error::Range(format!(
                "oracle needs stored frame {}, volume has {}",
                last.last_index(),
                vol.stored_frames()
            )));
        }
        let mut img = Image::new(w, h, ch);
        for y in 0..h {
            let t = GridTime::at(0, offset + y, self.rows, vol.oversampling());
            let vals = row_at(vol, t, y);
            for c in 0..ch {
                img.row_mut(c, y).copy_from_slice(&vals[c * w..(c + 1) * w]);
            }
        }
        Ok(img)
    }

    fn offset(&self, tau: f64, ctx: &PairContext) -> Result<usize> {
        let n = self.rows;
        let scaled = tau * n as f64;
        let m = scaled.round();
        if (scaled - m).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "oracle interpolator needs fractions on the 1/{n} grid, got {tau}"
            )));
        }
        let m = m as usize;
        if ctx.pair + 1 >= ctx.clip_len {
            return Err(Error::Range(format!(
                "pair {} outside a {}-frame clip",
                ctx.pair, ctx.clip_len
            )));
        }
        Ok(if ctx.augmentation.time_reverse {
            (ctx.clip_len - 2 - ctx.pair) * n + (n - m)
        } else {
            ctx.pair * n + m
        })
    }
}

struct OracleFrames<'a> {
    oracle: &'a OracleInterpolator,
    offsets: Vec<usize>,
    ctx: PairContext,
    width: usize,
    height: usize,
}

impl PairFrames for OracleFrames<'_> {
    fn len(&self) -> usize {
        self.offsets.len()
    }

    fn frame(&mut self, index: usize) -> Result<Image> {
        let plane = self.oracle.slanted_plane(self.offsets[index])?;
        let img = self.ctx.augmentation.spatial(&plane);
        if img.width() != self.width || img.height() != self.height {
            return Err(Error::Dimension(format!(
                "oracle volume gives {}x{} frames, clip has {}x{}",
                img.width(),
                img.height(),
                self.width,
                self.height
            )));
        }
        Ok(img)
    }
}

impl Interpolator for OracleInterpolator {
    fn name(&self) -> &str {
        "oracle"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            max_displacement: None,
            max_batch: None,
            concurrent: true,
        }
    }

    fn begin_pair<'a>(
        &'a self,
        a: &'a Image,
        b: &'a Image,
        fractions: &[f64],
        ctx: &PairContext,
    ) -> Result<Box<dyn PairFrames + 'a>> {
        a.check_same_shape(b)?;
        check_fractions(fractions)?;
        let offsets = fractions.iter().map(|&t| self.offset(t, ctx)).collect::<Result<_>>()?;
        Ok(Box::new(OracleFrames {
            oracle: self,
            offsets,
            ctx: *ctx,
            width: a.width(),
            height: a.height(),
        }))
    }
}
