//! PSNR and SSIM on `[0, 1]` data, with optional binary masks.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::volume::VideoClip;

/// Mask samples at or above this value count as "evaluate here".
const MASK_ON: f32 = 0.5;

fn check_mask(a: &Image, mask: Option<&Image>) -> Result<()> {
    if let Some(m) = mask {
        if m.width() != a.width() || m.height() != a.height() {
            return Err(Error::Dimension(format!(
                "mask {}x{} vs image {}x{}",
                m.width(),
                m.height(),
                a.width(),
                a.height()
            )));
        }
    }
    Ok(())
}

/// Mean squared error over masked pixels (all channels).
pub fn mse(a: &Image, b: &Image, mask: Option<&Image>) -> Result<f64> {
    a.check_same_shape(b)?;
    check_mask(a, mask)?;
    let n = a.plane_len();
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for c in 0..a.channels() {
        let (pa, pb) = (a.plane(c), b.plane(c));
        for i in 0..n {
            if mask.is_some_and(|m| m.plane(0)[i] < MASK_ON) {
                continue;
            }
            let d = pa[i] as f64 - pb[i] as f64;
            sum += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Config("mask selects no pixels".into()));
    }
    Ok(sum / count as f64)
}

/// `10·log10(1 / MSE)`; identical inputs give `+inf`.
pub fn psnr(a: &Image, b: &Image, mask: Option<&Image>) -> Result<f64> {
    let m = mse(a, b, mask)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

/// Per-frame PSNR values.
pub fn psnr_frames(a: &VideoClip, b: &VideoClip, masks: Option<&[Image]>) -> Result<Vec<f64>> {
    a.check_compatible(b)?;
    check_mask_count(a, masks)?;
    a.frames
        .iter()
        .zip(&b.frames)
        .enumerate()
        .map(|(k, (fa, fb))| psnr(fa, fb, masks.map(|m| &m[k])))
        .collect()
}

/// Mean of per-frame PSNR.
pub fn psnr_clip(a: &VideoClip, b: &VideoClip, masks: Option<&[Image]>) -> Result<f64> {
    let v = psnr_frames(a, b, masks)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

fn check_mask_count(a: &VideoClip, masks: Option<&[Image]>) -> Result<()> {
    match masks {
        Some(m) if m.len() != a.len() => Err(Error::Dimension(format!("{} masks for {} frames", m.len(), a.len()))),
        _ => Ok(()),
    }
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut k: [f64; SSIM_WINDOW] = std::array::from_fn(|i| {
        let d = i as f64 - r;
        (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Gaussian-weighted moments over every full window; returns a map indexed by
/// window position (`(w - 10) × (h - 10)`).
fn ssim_map(a: &[f32], b: &[f32], w: usize, h: usize) -> Vec<f64> {
    let k = ssim_kernel();
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    // Horizontal pass for the five moment images.
    let mut horiz = vec![[0.0f64; 5]; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = [0.0f64; 5];
            for (i, kv) in k.iter().enumerate() {
                let p = y * w + x + i;
                let (va, vb) = (a[p] as f64, b[p] as f64);
                acc[0] += kv * va;
                acc[1] += kv * vb;
                acc[2] += kv * va * va;
                acc[3] += kv * vb * vb;
                acc[4] += kv * va * vb;
            }
            horiz[y * ow + x] = acc;
        }
    }
    let mut out = Vec::with_capacity(ow * oh);
    for y in 0..oh {
        for x in 0..ow {
            let mut m = [0.0f64; 5];
            for (i, kv) in k.iter().enumerate() {
                let hv = &horiz[(y + i) * ow + x];
                for j in 0..5 {
                    m[j] += kv * hv[j];
                }
            }
            let (mu_a, mu_b) = (m[0], m[1]);
            let var_a = m[2] - mu_a * mu_a;
            let var_b = m[3] - mu_b * mu_b;
            let cov = m[4] - mu_a * mu_b;
            let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
            let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            out.push(num / den);
        }
    }
    out
}

/// Single-scale SSIM (11×11 Gaussian window, σ = 1.5, K1 = 0.01, K2 = 0.03,
/// dynamic range 1), averaged over window centers and channels. With a mask,
/// only windows centered on selected pixels count.
pub fn ssim(a: &Image, b: &Image, mask: Option<&Image>) -> Result<f64> {
    a.check_same_shape(b)?;
    check_mask(a, mask)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::TooSmall(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let r = SSIM_WINDOW / 2;
    let ow = w - SSIM_WINDOW + 1;
    let mut sum = 0.0;
    let mut count = 0usize;
    for c in 0..a.channels() {
        let map = ssim_map(a.plane(c), b.plane(c), w, h);
        for (i, v) in map.iter().enumerate() {
            let (x, y) = (i % ow + r, i / ow + r);
            if mask.is_some_and(|m| m.get(x, y, 0) < MASK_ON) {
                continue;
            }
            sum += v;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Config("mask selects no SSIM window centers".into()));
    }
    Ok(sum / count as f64)
}

pub fn ssim_frames(a: &VideoClip, b: &VideoClip, masks: Option<&[Image]>) -> Result<Vec<f64>> {
    a.check_compatible(b)?;
    check_mask_count(a, masks)?;
    a.frames
        .iter()
        .zip(&b.frames)
        .enumerate()
        .map(|(k, (fa, fb))| ssim(fa, fb, masks.map(|m| &m[k])))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, 1, |x, y, _| {
            0.5 + 0.4 * ((x as f32 * 0.7).sin() * (y as f32 * 0.45).cos())
        })
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let a = textured(16, 16);
        assert_eq!(psnr(&a, &a, None).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_closed_form() {
        let a = Image::filled(20, 20, 3, 0.2);
        let b = Image::filled(20, 20, 3, 0.2 + 10.0 / 255.0);
        let want = 20.0 * (255.0f64 / 10.0).log10();
        assert!((psnr(&a, &b, None).unwrap() - want).abs() < 1e-3);
    }

    #[test]
    fn masked_psnr_ignores_corrupted_half() {
        let a = textured(16, 16);
        let mut b = a.clone();
        for y in 0..16 {
            for x in 8..16 {
                b.set(x, y, 0, 1.0 - a.get(x, y, 0));
            }
        }
        let mask = Image::from_fn(16, 16, 1, |x, _, _| if x < 8 { 1.0 } else { 0.0 });
        assert_eq!(psnr(&a, &b, Some(&mask)).unwrap(), f64::INFINITY);
        assert!(psnr(&a, &b, None).unwrap().is_finite());
        let empty = Image::new(16, 16, 1);
        assert!(psnr(&a, &b, Some(&empty)).is_err());
    }

    #[test]
    fn all_ones_mask_is_bit_exact() {
        let a = textured(24, 20);
        let b = Image::from_fn(24, 20, 1, |x, y, _| ((x * y) % 7) as f32 / 7.0);
        let ones = Image::filled(24, 20, 1, 1.0);
        assert_eq!(
            psnr(&a, &b, None).unwrap().to_bits(),
            psnr(&a, &b, Some(&ones)).unwrap().to_bits()
        );
        assert_eq!(
            ssim(&a, &b, None).unwrap().to_bits(),
            ssim(&a, &b, Some(&ones)).unwrap().to_bits()
        );
    }

    #[test]
    fn ssim_self_is_one() {
        let a = textured(32, 24);
        assert!((ssim(&a, &a, None).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_of_negative_is_below_one() {
        let a = textured(32, 32);
        let b = Image::from_fn(32, 32, 1, |x, y, _| 1.0 - a.get(x, y, 0));
        let s = ssim(&a, &b, None).unwrap();
        assert!(s < 0.0, "anticorrelated structure gives negative SSIM, got {s}");
    }

    #[test]
    fn ssim_constant_images_reduce_to_luminance_term() {
        let (ma, mb) = (0.2f64, 0.7f64);
        let a = Image::filled(16, 16, 1, ma as f32);
        let b = Image::filled(16, 16, 1, mb as f32);
        let (ma, mb) = (ma as f32 as f64, mb as f32 as f64);
        let c1 = 0.01f64.powi(2);
        let want = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        assert!((ssim(&a, &b, None).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn ssim_rejects_small_input() {
        let a = Image::new(10, 30, 1);
        assert!(matches!(ssim(&a, &a, None), Err(Error::TooSmall(_))));
    }
}
