//! Space-time volumes and their global/rolling shutter samplings.
//!
//! Time is measured in frame periods (ΔT = 1). A volume stores `R` frames per
//! unit time, so stored frame `s` sits at time `s / R`. A global-shutter frame
//! `k` reads every row at time `k`; a rolling-shutter frame reads row `j` at
//! time `k + j / N`.

use std::borrow::Cow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shutter {
    Global,
    Rolling,
}

/// Scan order of a rolling-shutter sensor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    #[default]
    Vertical,
    /// Pixel `(i, j)` is read at offset `((i + j) mod N) / N`.
    Diagonal,
}

/// A frame sequence tagged with its shutter model.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub frames: Vec<Image>,
    pub shutter: Shutter,
    /// Readout rows per frame period (`N`), normally the frame height.
    pub rows: usize,
    pub readout: Readout,
}

impl VideoClip {
    pub fn new(frames: Vec<Image>, shutter: Shutter) -> Result<Self> {
        let rows = frames.first().map(Image::height).unwrap_or(0);
        Self::with_rows(frames, shutter, rows, Readout::Vertical)
    }

    pub fn with_rows(frames: Vec<Image>, shutter: Shutter, rows: usize, readout: Readout) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::TooSmall("clip has no frames".into()));
        };
        if let Some(bad) = frames.iter().position(|f| !f.same_shape(first)) {
            return Err(Error::Dimension(format!("frame {bad} differs in shape from frame 0")));
        }
        if rows < 2 {
            return Err(Error::Config(format!("rows per frame must be >= 2, got {rows}")));
        }
        Ok(Self {
            frames,
            shutter,
            rows,
            readout,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn channels(&self) -> usize {
        self.frames[0].channels()
    }

    /// Capture time of pixel `(x, y)` in frame `k`.
    pub fn timestamp(&self, k: usize, x: usize, y: usize) -> f64 {
        match (self.shutter, self.readout) {
            (Shutter::Global, _) => k as f64,
            (Shutter::Rolling, Readout::Vertical) => k as f64 + y as f64 / self.rows as f64,
            (Shutter::Rolling, Readout::Diagonal) => k as f64 + ((x + y) % self.rows) as f64 / self.rows as f64,
        }
    }

    pub fn check_compatible(&self, other: &VideoClip) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Dimension(format!(
                "clips have {} and {} frames",
                self.len(),
                other.len()
            )));
        }
        self.frames[0].check_same_shape(&other.frames[0])
    }

    pub fn luma(&self) -> VideoClip {
        VideoClip {
            frames: self.frames.iter().map(Image::luma).collect(),
            ..self.clone()
        }
    }
}

/// Anything that can be read like a dense high-framerate volume.
///
/// Implementations must be pure: the same index always yields the same samples.
pub trait VolumeSource: Sync {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn channels(&self) -> usize;
    /// Stored frames per unit time (`R`).
    fn oversampling(&self) -> usize;
    fn stored_frames(&self) -> usize;
    fn frame(&self, index: usize) -> Cow<'_, Image>;

    /// Row `y` of stored frame `index`, planar over channels (`channels * width` values).
    fn row(&self, index: usize, y: usize) -> Vec<f32> {
        let f = self.frame(index);
        (0..self.channels()).flat_map(|c| f.row(c, y).to_vec()).collect()
    }

    /// One pixel of stored frame `index`, one value per channel.
    fn pixel(&self, index: usize, x: usize, y: usize) -> Vec<f32> {
        let f = self.frame(index);
        (0..self.channels()).map(|c| f.get(x, y, c)).collect()
    }

    /// Number of whole frame periods covered.
    fn duration(&self) -> usize {
        (self.stored_frames().saturating_sub(1)) / self.oversampling()
    }
}

/// Dense discretization of the continuous scene signal.
#[derive(Clone, Debug)]
pub struct SpaceTimeVolume {
    frames: Vec<Image>,
    oversampling: usize,
}

impl SpaceTimeVolume {
    pub fn new(frames: Vec<Image>, oversampling: usize) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::TooSmall("volume has no frames".into()));
        };
        if oversampling == 0 {
            return Err(Error::Config("temporal oversampling must be >= 1".into()));
        }
        if frames.iter().any(|f| !f.same_shape(first)) {
            return Err(Error::Dimension("volume frames differ in shape".into()));
        }
        Ok(Self { frames, oversampling })
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    /// Materializes any volume source.
    pub fn from_source(src: &dyn VolumeSource) -> Result<Self> {
        let frames = (0..src.stored_frames())
            .into_par_iter()
            .map(|i| src.frame(i).into_owned())
            .collect();
        Self::new(frames, src.oversampling())
    }
}

impl VolumeSource for SpaceTimeVolume {
    fn width(&self) -> usize {
        self.frames[0].width()
    }
    fn height(&self) -> usize {
        self.frames[0].height()
    }
    fn channels(&self) -> usize {
        self.frames[0].channels()
    }
    fn oversampling(&self) -> usize {
        self.oversampling
    }
    fn stored_frames(&self) -> usize {
        self.frames.len()
    }
    fn frame(&self, index: usize) -> Cow<'_, Image> {
        Cow::Borrowed(&self.frames[index])
    }
}

/// A time on the stored-frame grid: `base + rem / denom` stored frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct GridTime {
    pub base: usize,
    pub rem: usize,
    pub denom: usize,
}

impl GridTime {
    /// Stored-frame position of time `k + offset / rows`, computed in integers.
    pub fn at(k: usize, offset: usize, rows: usize, oversampling: usize) -> Self {
        let numer = (k * rows + offset) * oversampling;
        Self {
            base: numer / rows,
            rem: numer % rows,
            denom: rows,
        }
    }

    pub fn last_index(&self) -> usize {
        if self.rem == 0 {
            self.base
        } else {
            self.base + 1
        }
    }

    pub fn weight(&self) -> f32 {
        self.rem as f32 / self.denom as f32
    }
}

/// Reads row `y` of the volume at a grid time, blending the two bracketing
/// stored frames when the time falls between them.
pub(crate) fn row_at(src: &dyn VolumeSource, time: GridTime, y: usize) -> Vec<f32> {
    let lo = src.row(time.base, y);
    if time.rem == 0 {
        return lo;
    }
    let hi = src.row(time.base + 1, y);
    let w = time.weight();
    lo.iter().zip(&hi).map(|(a, b)| a + w * (b - a)).collect()
}

fn pixel_at(src: &dyn VolumeSource, time: GridTime, x: usize, y: usize) -> Vec<f32> {
    let lo = src.pixel(time.base, x, y);
    if time.rem == 0 {
        return lo;
    }
    let hi = src.pixel(time.base + 1, x, y);
    let w = time.weight();
    lo.iter().zip(&hi).map(|(a, b)| a + w * (b - a)).collect()
}

/// Global-shutter sampling: frame `k` is the stored frame at time `k`.
pub fn sample_gs(vol: &dyn VolumeSource, count: usize) -> Result<VideoClip> {
    if count == 0 {
        return Err(Error::Range("requested zero frames".into()));
    }
    let last = (count - 1) * vol.oversampling();
    if last >= vol.stored_frames() {
        return Err(Error::Range(format!(
            "{count} GS frames need stored frame {last}, volume has {}",
            vol.stored_frames()
        )));
    }
    let frames = (0..count)
        .into_par_iter()
        .map(|k| vol.frame(k * vol.oversampling()).into_owned())
        .collect();
    VideoClip::new(frames, Shutter::Global)
}

/// Rolling-shutter sampling with `rows` readout rows per frame period
/// (defaults to the volume height).
pub fn sample_rs(vol: &dyn VolumeSource, count: usize, readout: Readout, rows: Option<usize>) -> Result<VideoClip> {
    let (w, h, ch) = (vol.width(), vol.height(), vol.channels());
    let rows = rows.unwrap_or(h);
    if rows < 2 {
        return Err(Error::Config(format!("rows per frame must be >= 2, got {rows}")));
    }
    if count == 0 {
        return Err(Error::Range("requested zero frames".into()));
    }
    let max_offset = match readout {
        Readout::Vertical => h - 1,
        Readout::Diagonal => (rows - 1).min(w + h - 2),
    };
    let end = GridTime::at(count - 1, max_offset, rows, vol.oversampling());
    if end.last_index() >= vol.stored_frames() {
        return Err(Error::Range(format!(
            "last RS row needs stored frame {}, volume has {}",
            end.last_index(),
            vol.stored_frames()
        )));
    }
    let r = vol.oversampling();
    let frames: Vec<Image> = (0..count)
        .into_par_iter()
        .map(|k| {
            let mut frame = Image::new(w, h, ch);
            match readout {
                Readout::Vertical => {
                    for y in 0..h {
                        let vals = row_at(vol, GridTime::at(k, y, rows, r), y);
                        for c in 0..ch {
                            frame.row_mut(c, y).copy_from_slice(&vals[c * w..(c + 1) * w]);
                        }
                    }
                }
                Readout::Diagonal => {
                    for y in 0..h {
                        for x in 0..w {
                            let t = GridTime::at(k, (x + y) % rows, rows, r);
                            let vals = pixel_at(vol, t, x, y);
                            for (c, v) in vals.into_iter().enumerate() {
                                frame.set(x, y, c, v);
                            }
                        }
                    }
                }
            }
            frame
        })
        .collect();
    VideoClip::with_rows(frames, Shutter::Rolling, rows, readout)
}

/// An xt-slice: row `row` of every frame stacked along t (x horizontal, t vertical).
#[derive(Clone, Debug, PartialEq)]
pub struct XtSlice {
    pub data: Image,
    pub row: usize,
    pub source_shutter: Shutter,
}

pub fn xt_slice(clip: &VideoClip, row: usize) -> Result<XtSlice> {
    if row >= clip.height() {
        return Err(Error::Range(format!(
            "row {row} outside frame height {}",
            clip.height()
        )));
    }
    let (w, k, ch) = (clip.width(), clip.len(), clip.channels());
    let mut data = Image::new(w, k, ch);
    for (t, f) in clip.frames.iter().enumerate() {
        for c in 0..ch {
            data.row_mut(c, t).copy_from_slice(f.row(c, row));
        }
    }
    Ok(XtSlice {
        data,
        row,
        source_shutter: clip.shutter,
    })
}

/// Temporal variance below which a slice column is treated as textureless.
const MIN_COLUMN_VARIANCE: f64 = 1e-5;

/// Measures the sub-frame temporal shift between the row-`row` xt-slices of a
/// GS clip and an RS clip of the same scene (RS ≈ GS delayed by `row / N`).
///
/// Each slice column is registered independently by grid search over a cubic
/// interpolant followed by a parabolic refinement; the median over textured
/// columns is returned.
pub fn verify_shift_relation(gs: &VideoClip, rs: &VideoClip, row: usize) -> Result<f64> {
    gs.check_compatible(rs)?;
    if gs.len() < 4 {
        return Err(Error::TooSmall("shift registration needs >= 4 frames".into()));
    }
    let g = xt_slice(&gs.luma(), row)?.data;
    let r = xt_slice(&rs.luma(), row)?.data;
    let (w, k) = (g.width(), g.height());

    let mut shifts: Vec<f64> = (0..w)
        .filter_map(|x| {
            let gcol: Vec<f64> = (0..k).map(|t| g.get(x, t, 0) as f64).collect();
            let rcol: Vec<f64> = (0..k).map(|t| r.get(x, t, 0) as f64).collect();
            let mean = gcol.iter().sum::<f64>() / k as f64;
            let var = gcol.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k as f64;
            (var >= MIN_COLUMN_VARIANCE).then(|| register_column(&gcol, &rcol))
        })
        .collect();

    if shifts.len() < 3.max(w / 8) {
        return Err(Error::IndeterminateShift(format!(
            "only {} of {w} slice columns carry temporal texture",
            shifts.len()
        )));
    }
    shifts.sort_by(f64::total_cmp);
    let n = shifts.len();
    Ok(if n % 2 == 1 {
        shifts[n / 2]
    } else {
        0.5 * (shifts[n / 2 - 1] + shifts[n / 2])
    })
}

const SHIFT_MIN: f64 = -0.5;
const SHIFT_MAX: f64 = 1.5;
const SHIFT_STEP: f64 = 0.02;

/// Finds `s` minimizing the mean squared difference between `r[t]` and `g(t + s)`.
fn register_column(g: &[f64], r: &[f64]) -> f64 {
    let steps = ((SHIFT_MAX - SHIFT_MIN) / SHIFT_STEP).round() as usize;
    let costs: Vec<f64> = (0..=steps)
        .map(|i| shift_cost(g, r, SHIFT_MIN + i as f64 * SHIFT_STEP))
        .collect();
    let best = costs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let s = SHIFT_MIN + best as f64 * SHIFT_STEP;
    if best == 0 || best == steps {
        return s;
    }
    let (c0, c1, c2) = (costs[best - 1], costs[best], costs[best + 1]);
    let denom = c0 - 2.0 * c1 + c2;
    if denom <= 0.0 {
        return s;
    }
    s + 0.5 * SHIFT_STEP * (c0 - c2) / denom
}

fn shift_cost(g: &[f64], r: &[f64], s: f64) -> f64 {
    let last = (g.len() - 1) as f64;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (t, rv) in r.iter().enumerate() {
        let pos = t as f64 + s;
        if pos < 0.0 || pos > last {
            continue;
        }
        let d = rv - cubic_at(g, pos);
        sum += d * d;
        n += 1;
    }
    if n == 0 {
        f64::INFINITY
    } else {
        sum / n as f64
    }
}

/// Catmull-Rom interpolation with clamped end samples.
fn cubic_at(v: &[f64], pos: f64) -> f64 {
    let i = pos.floor() as isize;
    let f = pos - i as f64;
    let at = |j: isize| v[j.clamp(0, v.len() as isize - 1) as usize];
    let (p0, p1, p2, p3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
    p1 + 0.5 * f * (p2 - p0 + f * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3 + f * (3.0 * (p1 - p2) + p3 - p0)))
}
