//! Evaluation reports.
//!
//! Text layout: one `frame=<k> key=value ...` line per evaluated frame, then a
//! `[summary]` header followed by `key=value` lines. Values use six decimals;
//! an infinite PSNR prints as `inf`.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::quality::{psnr_frames, ssim_frames};
use crate::error::Result;
use crate::image::Image;
use crate::volume::VideoClip;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub index: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub masked_psnr: Option<f64>,
    pub masked_ssim: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: Vec<FrameScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_masked_psnr: Option<f64>,
    pub mean_masked_ssim: Option<f64>,
    /// Free-form echo of the evaluation settings.
    pub config: BTreeMap<String, String>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

pub fn evaluate(
    pred: &VideoClip,
    gt: &VideoClip,
    masks: Option<&[Image]>,
    config: BTreeMap<String, String>,
) -> Result<EvalReport> {
    let psnr = psnr_frames(pred, gt, None)?;
    let ssim = ssim_frames(pred, gt, None)?;
    let (mp, ms) = match masks {
        Some(m) => (
            Some(psnr_frames(pred, gt, Some(m))?),
            Some(ssim_frames(pred, gt, Some(m))?),
        ),
        None => (None, None),
    };
    let frames: Vec<FrameScore> = (0..pred.len())
        .map(|k| FrameScore {
            index: k,
            psnr: psnr[k],
            ssim: ssim[k],
            masked_psnr: mp.as_ref().map(|v| v[k]),
            masked_ssim: ms.as_ref().map(|v| v[k]),
        })
        .collect();
    Ok(EvalReport {
        mean_psnr: mean(psnr.iter().copied()),
        mean_ssim: mean(ssim.iter().copied()),
        mean_masked_psnr: mp.as_ref().map(|v| mean(v.iter().copied())),
        mean_masked_ssim: ms.as_ref().map(|v| mean(v.iter().copied())),
        frames,
        config,
    })
}

fn num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.6}")
    }
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for f in &self.frames {
            let _ = write!(s, "frame={} psnr={} ssim={}", f.index, num(f.psnr), num(f.ssim));
            if let (Some(p), Some(q)) = (f.masked_psnr, f.masked_ssim) {
                let _ = write!(s, " masked_psnr={} masked_ssim={}", num(p), num(q));
            }
            s.push('\n');
        }
        s.push_str("[summary]\n");
        let _ = writeln!(s, "frames={}", self.frames.len());
        let _ = writeln!(s, "mean_psnr={}", num(self.mean_psnr));
        let _ = writeln!(s, "mean_ssim={}", num(self.mean_ssim));
        if let (Some(p), Some(q)) = (self.mean_masked_psnr, self.mean_masked_ssim) {
            let _ = writeln!(s, "mean_masked_psnr={}", num(p));
            let _ = writeln!(s, "mean_masked_ssim={}", num(q));
        }
        for (k, v) in &self.config {
            let _ = writeln!(s, "config.{k}={v}");
        }
        s
    }
}
