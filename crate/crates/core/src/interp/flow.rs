//! Dense coarse-to-fine Lucas-Kanade flow on luma.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{bilinear, gaussian_blur, Image};

pub const PYRAMID_LEVELS: usize = 4;
pub const WARP_ITERATIONS: usize = 5;
/// Gaussian window of the local structure tensor.
pub const WINDOW_SIGMA: f32 = 2.0;
/// Forward-backward disagreement above which flow is untrusted, in px.
pub const FB_TOLERANCE: f32 = 1.0;
/// Minimum structure-tensor eigenvalue for a trusted estimate.
pub const MIN_EIGENVALUE: f32 = 1e-6;

const REGULARIZATION: f32 = 1e-5;
const MAX_STEP: f32 = 1.0;
const MIN_LEVEL_SIZE: usize = 8;

/// Displacements from frame A to frame B, in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
    pub confidence: Vec<f32>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            u: vec![0.0; n],
            v: vec![0.0; n],
            confidence: vec![0.0; n],
        }
    }

    pub fn at(&self, x: f32, y: f32) -> (f32, f32) {
        (
            bilinear(&self.u, self.width, self.height, x, y),
            bilinear(&self.v, self.width, self.height, x, y),
        )
    }
}

struct Level {
    w: usize,
    h: usize,
    img: Vec<f32>,
    gx: Vec<f32>,
    gy: Vec<f32>,
}

impl Level {
    fn new(w: usize, h: usize, img: Vec<f32>) -> Self {
        let (gx, gy) = gradients(&img, w, h);
        Self { w, h, img, gx, gy }
    }
}

fn gradients(p: &[f32], w: usize, h: usize) -> (Vec<f32>, Vec<f32>) {
    let mut gx = vec![0.0; p.len()];
    let mut gy = vec![0.0; p.len()];
    for y in 0..h {
        let ym = y.saturating_sub(1);
        let yp = (y + 1).min(h - 1);
        for x in 0..w {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(w - 1);
            gx[y * w + x] = (p[y * w + xp] - p[y * w + xm]) / (xp - xm).max(1) as f32;
            gy[y * w + x] = (p[yp * w + x] - p[ym * w + x]) / (yp - ym).max(1) as f32;
        }
    }
    (gx, gy)
}

fn downsample(p: &[f32], w: usize, h: usize) -> (Vec<f32>, usize, usize) {
    let blurred = gaussian_blur(p, w, h, 1.0);
    let (wc, hc) = (w.div_ceil(2), h.div_ceil(2));
    let mut out = Vec::with_capacity(wc * hc);
    for y in 0..hc {
        for x in 0..wc {
            out.push(blurred[2 * y * w + 2 * x]);
        }
    }
    (out, wc, hc)
}

fn pyramid(luma: &[f32], w: usize, h: usize) -> Vec<Level> {
    let mut levels = PYRAMID_LEVELS;
    while levels > 1 && (w.min(h) >> (levels - 1)) < MIN_LEVEL_SIZE {
        levels -= 1;
    }
    let mut out = vec![Level::new(w, h, luma.to_vec())];
    for _ in 1..levels {
        let last = out.last().unwrap();
        let (img, wc, hc) = downsample(&last.img, last.w, last.h);
        out.push(Level::new(wc, hc, img));
    }
    out
}

fn median3(p: &[f32], w: usize, h: usize) -> Vec<f32> {
    let mut out = vec![0.0; p.len()];
    for y in 0..h {
        for x in 0..w {
            let mut win = [0.0f32; 9];
            let mut n = 0;
            for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    win[n] = p[yy * w + xx];
                    n += 1;
                }
            }
            let win = &mut win[..n];
            win.sort_unstable_by(f32::total_cmp);
            out[y * w + x] = if n % 2 == 1 {
                win[n / 2]
            } else {
                0.5 * (win[n / 2 - 1] + win[n / 2])
            };
        }
    }
    out
}

/// One level of warp-refined Lucas-Kanade, updating `u`, `v` in place.
fn refine_level(a: &Level, b: &Level, u: &mut [f32], v: &mut [f32]) {
    let (w, h) = (a.w, a.h);
    let n = w * h;
    let mut prods = vec![vec![0.0f32; n]; 5];
    for _ in 0..WARP_ITERATIONS {
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let sx = x as f32 + u[i];
                let sy = y as f32 + v[i];
                let inside = sx >= 0.0 && sy >= 0.0 && sx <= (w - 1) as f32 && sy <= (h - 1) as f32;
                let (gx, gy, it) = if inside {
                    let bw = bilinear(&b.img, w, h, sx, sy);
                    let gx = 0.5 * (a.gx[i] + bilinear(&b.gx, w, h, sx, sy));
                    let gy = 0.5 * (a.gy[i] + bilinear(&b.gy, w, h, sx, sy));
                    (gx, gy, bw - a.img[i])
                } else {
                    (0.0, 0.0, 0.0)
                };
                prods[0][i] = gx * gx;
                prods[1][i] = gx * gy;
                prods[2][i] = gy * gy;
                prods[3][i] = gx * it;
                prods[4][i] = gy * it;
            }
        }
        let s: Vec<Vec<f32>> = prods.par_iter().map(|p| gaussian_blur(p, w, h, WINDOW_SIGMA)).collect();
        for i in 0..n {
            let j11 = s[0][i] + REGULARIZATION;
            let j12 = s[1][i];
            let j22 = s[2][i] + REGULARIZATION;
            let (b1, b2) = (s[3][i], s[4][i]);
            let det = j11 * j22 - j12 * j12;
            let du = -(j22 * b1 - j12 * b2) / det;
            let dv = -(j11 * b2 - j12 * b1) / det;
            u[i] += du.clamp(-MAX_STEP, MAX_STEP);
            v[i] += dv.clamp(-MAX_STEP, MAX_STEP);
        }
    }
}

fn raw_flow(pa: &[Level], pb: &[Level]) -> (Vec<f32>, Vec<f32>) {
    let top = pa.len() - 1;
    let (mut u, mut v) = {
        let n = pa[top].w * pa[top].h;
        (vec![0.0f32; n], vec![0.0f32; n])
    };
    for l in (0..=top).rev() {
        let (a, b) = (&pa[l], &pb[l]);
        if l < top {
            let c = &pa[l + 1];
            let mut uf = vec![0.0; a.w * a.h];
            let mut vf = vec![0.0; a.w * a.h];
            for y in 0..a.h {
                for x in 0..a.w {
                    let (cx, cy) = (x as f32 * 0.5, y as f32 * 0.5);
                    uf[y * a.w + x] = 2.0 * bilinear(&u, c.w, c.h, cx, cy);
                    vf[y * a.w + x] = 2.0 * bilinear(&v, c.w, c.h, cx, cy);
                }
            }
            u = uf;
            v = vf;
        }
        refine_level(a, b, &mut u, &mut v);
        u = median3(&u, a.w, a.h);
        v = median3(&v, a.w, a.h);
    }
    (u, v)
}

/// Smallest eigenvalue of the windowed structure tensor.
fn min_eigenvalue(level: &Level) -> Vec<f32> {
    let (w, h) = (level.w, level.h);
    let xx: Vec<f32> = level.gx.iter().map(|g| g * g).collect();
    let xy: Vec<f32> = level.gx.iter().zip(&level.gy).map(|(a, b)| a * b).collect();
    let yy: Vec<f32> = level.gy.iter().map(|g| g * g).collect();
    let xx = gaussian_blur(&xx, w, h, WINDOW_SIGMA);
    let xy = gaussian_blur(&xy, w, h, WINDOW_SIGMA);
    let yy = gaussian_blur(&yy, w, h, WINDOW_SIGMA);
    (0..w * h)
        .map(|i| {
            let tr = 0.5 * (xx[i] + yy[i]);
            let d = (0.25 * (xx[i] - yy[i]).powi(2) + xy[i] * xy[i]).sqrt();
            tr - d
        })
        .collect()
}

fn confidence(fwd: (&[f32], &[f32]), bwd: (&[f32], &[f32]), eig: &[f32], w: usize, h: usize) -> Vec<f32> {
    (0..w * h)
        .map(|i| {
            if eig[i] <= MIN_EIGENVALUE {
                return 0.0;
            }
            let (x, y) = ((i % w) as f32, (i / w) as f32);
            let (tx, ty) = (x + fwd.0[i], y + fwd.1[i]);
            if tx < 0.0 || ty < 0.0 || tx > (w - 1) as f32 || ty > (h - 1) as f32 {
                return 0.0;
            }
            let ex = fwd.0[i] + bilinear(bwd.0, w, h, tx, ty);
            let ey = fwd.1[i] + bilinear(bwd.1, w, h, tx, ty);
            let err = (ex * ex + ey * ey).sqrt();
            if err > FB_TOLERANCE {
                0.0
            } else {
                1.0 - err / FB_TOLERANCE
            }
        })
        .collect()
}

fn luma_plane(img: &Image) -> Vec<f32> {
    if img.channels() == 1 {
        img.plane(0).to_vec()
    } else {
        img.luma().into_vec()
    }
}

/// Flow from `a` to `b` and from `b` to `a`, each with forward-backward confidence.
pub fn estimate_flow_pair(a: &Image, b: &Image) -> Result<(FlowField, FlowField)> {
    a.check_same_shape(b)?;
    let (w, h) = (a.width(), a.height());
    if w < 2 || h < 2 {
        return Err(Error::TooSmall(format!("flow needs at least 2x2 frames, got {w}x{h}")));
    }
    let (pa, pb) = rayon::join(|| pyramid(&luma_plane(a), w, h), || pyramid(&luma_plane(b), w, h));
    let ((uf, vf), (ub, vb)) = rayon::join(|| raw_flow(&pa, &pb), || raw_flow(&pb, &pa));
    let (ea, eb) = rayon::join(|| min_eigenvalue(&pa[0]), || min_eigenvalue(&pb[0]));
    let ca = confidence((&uf, &vf), (&ub, &vb), &ea, w, h);
    let cb = confidence((&ub, &vb), (&uf, &vf), &eb, w, h);
    Ok((
        FlowField {
            width: w,
            height: h,
            u: uf,
            v: vf,
            confidence: ca,
        },
        FlowField {
            width: w,
            height: h,
            u: ub,
            v: vb,
            confidence: cb,
        },
    ))
}

pub fn estimate_flow(a: &Image, b: &Image) -> Result<FlowField> {
    Ok(estimate_flow_pair(a, b)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn texture(w: usize, h: usize, dx: f32) -> Image {
        Image::from_fn(w, h, 1, |x, y, _| {
            let x = x as f32 - dx;
            let y = y as f32;
            0.5 + 0.2 * (0.31 * x + 0.17 * y).sin()
                + 0.15 * (0.23 * y - 0.11 * x).cos()
                + 0.1 * (0.53 * x).sin() * (0.41 * y).cos()
        })
    }

    fn median(v: &[f32]) -> f32 {
        let mut s = v.to_vec();
        s.sort_by(f32::total_cmp);
        s[s.len() / 2]
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let a = texture(48, 40, 0.0);
        let f = estimate_flow(&a, &a).unwrap();
        assert!(f.u.iter().chain(&f.v).all(|d| d.abs() <= 0.05));
    }

    #[test]
    fn recovers_integer_shift() {
        let a = texture(64, 64, 0.0);
        let b = texture(64, 64, 3.0);
        let f = estimate_flow(&a, &b).unwrap();
        assert!((median(&f.u) - 3.0).abs() <= 0.2, "u = {}", median(&f.u));
        assert!(median(&f.v).abs() <= 0.2);
    }

    #[test]
    fn captures_eight_pixels() {
        let a = texture(64, 64, 0.0);
        let b = texture(64, 64, 8.0);
        let f = estimate_flow(&a, &b).unwrap();
        assert!((median(&f.u) - 8.0).abs() <= 0.3, "u = {}", median(&f.u));
    }

    #[test]
    fn flat_frames_have_no_confidence() {
        let a = Image::filled(32, 32, 3, 0.4);
        let f = estimate_flow(&a, &a).unwrap();
        assert!(f.confidence.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn rejects_shape_mismatch() {
        assert!(estimate_flow(&Image::new(8, 8, 1), &Image::new(9, 8, 1)).is_err());
    }
}
