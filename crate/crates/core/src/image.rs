//! Planar floating-point images.
//!
//! Pixel intensities live in `[0, 1]`; quantization to integer depths only
//! happens at file boundaries (see [`crate::io`]).

use crate::error::{Error, Result};

/// Rec. 601 luma weights.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// A planar (channel-major) image with `f32` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Dimension(format!(
                "buffer of {} samples cannot hold {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds an image by evaluating `f(x, y, c)` at every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(x, y, c));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    /// Stacks single-channel planes into one image.
    pub fn from_planes(planes: &[Image]) -> Result<Self> {
        let first = planes.first().ok_or_else(|| Error::Dimension("no planes".into()))?;
        let mut data = Vec::with_capacity(first.data.len() * planes.len());
        for p in planes {
            if p.channels != 1 || p.width != first.width || p.height != first.height {
                return Err(Error::Dimension("planes differ in shape".into()));
            }
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            width: first.width,
            height: first.height,
            channels: planes.len(),
            data,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Copies channel `c` out as a single-channel image.
    pub fn channel(&self, c: usize) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.plane(c).to_vec(),
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn row(&self, c: usize, y: usize) -> &[f32] {
        let start = (c * self.height + y) * self.width;
        &self.data[start..start + self.width]
    }

    pub fn row_mut(&mut self, c: usize, y: usize) -> &mut [f32] {
        let start = (c * self.height + y) * self.width;
        &mut self.data[start..start + self.width]
    }

    /// Copies row `y` (all channels) from `src` into row `y` of `self`.
    pub fn copy_row_from(&mut self, y: usize, src: &Image, src_y: usize) {
        for c in 0..self.channels {
            let s = src.row(c, src_y).to_vec();
            self.row_mut(c, y).copy_from_slice(&s);
        }
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn check_same_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    /// Single-channel luma. Grayscale input is returned unchanged.
    pub fn luma(&self) -> Image {
        if self.channels != 3 {
            return self.channel(0);
        }
        let n = self.plane_len();
        let mut out = vec![0.0f32; n];
        for (c, w) in LUMA_WEIGHTS.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(self.plane(c)) {
                *o += w * v;
            }
        }
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: out,
        }
    }

    /// Replicates a single-channel image into `channels` identical planes.
    pub fn broadcast(&self, channels: usize) -> Image {
        let mut data = Vec::with_capacity(self.plane_len() * channels);
        for _ in 0..channels {
            data.extend_from_slice(self.plane(0));
        }
        Image {
            width: self.width,
            height: self.height,
            channels,
            data,
        }
    }

    /// Rotates clockwise by `quarter_turns` × 90°.
    pub fn rotate90(&self, quarter_turns: u8) -> Image {
        match quarter_turns % 4 {
            0 => self.clone(),
            1 => {
                let (w, h) = (self.width, self.height);
                Image::from_fn(h, w, self.channels, |x, y, c| self.get(y, h - 1 - x, c))
            }
            2 => {
                let (w, h) = (self.width, self.height);
                Image::from_fn(w, h, self.channels, |x, y, c| self.get(w - 1 - x, h - 1 - y, c))
            }
            _ => {
                let (w, h) = (self.width, self.height);
                Image::from_fn(h, w, self.channels, |x, y, c| self.get(w - 1 - y, x, c))
            }
        }
    }

    /// Mirrors left to right.
    pub fn flip_horizontal(&self) -> Image {
        let w = self.width;
        Image::from_fn(w, self.height, self.channels, |x, y, c| self.get(w - 1 - x, y, c))
    }

    /// Bilinear sample of channel `c` with clamp-to-edge borders.
    #[inline]
    pub fn sample_bilinear(&self, c: usize, x: f32, y: f32) -> f32 {
        bilinear(self.plane(c), self.width, self.height, x, y)
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Rounds every sample to the nearest level of a `bits`-deep integer grid.
    pub fn quantize(&self, bits: u8) -> Image {
        let levels = ((1u32 << bits) - 1) as f32;
        let data = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * levels).round() / levels)
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data,
        }
    }

    pub fn max_abs_diff(&self, other: &Image) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }
}

/// Bilinear lookup into a row-major plane, clamping coordinates to the border.
#[inline]
pub fn bilinear(plane: &[f32], width: usize, height: usize, x: f32, y: f32) -> f32 {
    let xm = (width - 1) as f32;
    let ym = (height - 1) as f32;
    let x = x.clamp(0.0, xm);
    let y = y.clamp(0.0, ym);
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let x0 = x0 as usize;
    let y0 = y0 as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let p00 = plane[y0 * width + x0];
    let p10 = plane[y0 * width + x1];
    let p01 = plane[y1 * width + x0];
    let p11 = plane[y1 * width + x1];
    let top = p00 + fx * (p10 - p00);
    let bottom = p01 + fx * (p11 - p01);
    top + fy * (bottom - top)
}

/// Separable Gaussian blur of a row-major plane with replicated borders.
pub fn gaussian_blur(plane: &[f32], width: usize, height: usize, sigma: f32) -> Vec<f32> {
    if sigma <= 0.0 {
        return plane.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f32 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= sum);
    convolve_separable(plane, width, height, &kernel)
}

/// Convolves rows then columns with a symmetric odd-length kernel.
pub fn convolve_separable(plane: &[f32], width: usize, height: usize, kernel: &[f32]) -> Vec<f32> {
    let r = (kernel.len() / 2) as isize;
    let (w, h) = (width as isize, height as isize);
    let mut tmp = vec![0.0f32; plane.len()];
    for y in 0..height {
        let row = &plane[y * width..(y + 1) * width];
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                let xx = (x + i as isize - r).clamp(0, w - 1) as usize;
                acc += k * row[xx];
            }
            tmp[y * width + x as usize] = acc;
        }
    }
    let mut out = vec![0.0f32; plane.len()];
    for y in 0..h {
        for (i, k) in kernel.iter().enumerate() {
            let yy = (y + i as isize - r).clamp(0, h - 1) as usize;
            let src = &tmp[yy * width..(yy + 1) * width];
            let dst = &mut out[y as usize * width..(y as usize + 1) * width];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += k * s;
            }
        }
    }
    out
}
