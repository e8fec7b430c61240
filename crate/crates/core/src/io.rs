//! Frame directories: `frame_000000.png`, `frame_000001.png`, … plus a
//! `manifest.json` describing the clip.
//!
//! Frames are lossless PNG, 8-bit by default or 16-bit for deep stage
//! artifacts. Samples are quantized only here.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::volume::{Readout, Shutter, VideoClip};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitDepth {
    #[default]
    #[serde(rename = "8")]
    Eight,
    #[serde(rename = "16")]
    Sixteen,
}

impl BitDepth {
    pub fn bits(self) -> u8 {
        match self {
            BitDepth::Eight => 8,
            BitDepth::Sixteen => 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub width: usize,
    pub height: usize,
    pub count: usize,
    pub shutter: Shutter,
    pub rows: usize,
    pub channels: usize,
    #[serde(default)]
    pub readout: Readout,
    #[serde(default)]
    pub bit_depth: BitDepth,
}

pub fn frame_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

fn to_u16(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a gray or RGB image as PNG.
pub fn write_png(path: &Path, img: &Image, depth: BitDepth) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let n = img.plane_len();
    let interleaved = |f: &dyn Fn(f32) -> u16| -> Vec<u16> {
        let mut out = Vec::with_capacity(n * img.channels());
        for i in 0..n {
            for c in 0..img.channels() {
                out.push(f(img.plane(c)[i]));
            }
        }
        out
    };
    match (img.channels(), depth) {
        (1, BitDepth::Eight) => {
            let buf: Vec<u8> = img.plane(0).iter().map(|&v| to_u8(v)).collect();
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, buf)
                .expect("buffer sized from image")
                .save(path)?;
        }
        (1, BitDepth::Sixteen) => {
            let buf = interleaved(&|v| to_u16(v));
            ImageBuffer::<Luma<u16>, _>::from_raw(w, h, buf)
                .expect("buffer sized from image")
                .save(path)?;
        }
        (3, BitDepth::Eight) => {
            let buf: Vec<u8> = interleaved(&|v| to_u8(v) as u16).into_iter().map(|v| v as u8).collect();
            ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, buf)
                .expect("buffer sized from image")
                .save(path)?;
        }
        (3, BitDepth::Sixteen) => {
            let buf = interleaved(&|v| to_u16(v));
            ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, buf)
                .expect("buffer sized from image")
                .save(path)?;
        }
        (c, _) => return Err(Error::Dimension(format!("cannot write {c}-channel image as PNG"))),
    }
    Ok(())
}

/// Reads a PNG as gray (`channels = 1`) or RGB (`channels = 3`).
pub fn read_png(path: &Path, channels: usize) -> Result<Image> {
    if !path.exists() {
        return Err(Error::MissingResource(path.to_path_buf()));
    }
    let dynimg = image::open(path)?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let deep = matches!(
        dynimg.color(),
        image::ColorType::L16 | image::ColorType::Rgb16 | image::ColorType::La16 | image::ColorType::Rgba16
    );
    let n = w * h;
    let data: Vec<f32> = match (channels, deep) {
        (1, false) => dynimg
            .into_luma8()
            .into_raw()
            .iter()
            .map(|&v| v as f32 / 255.0)
            .collect(),
        (1, true) => dynimg
            .into_luma16()
            .into_raw()
            .iter()
            .map(|&v| v as f32 / 65535.0)
            .collect(),
        (3, false) => planar(&dynimg.into_rgb8().into_raw(), n, |v| v as f32 / 255.0),
        (3, true) => planar(&dynimg.into_rgb16().into_raw(), n, |v| v as f32 / 65535.0),
        (c, _) => return Err(Error::Dimension(format!("cannot read PNG as {c} channels"))),
    };
    Image::from_vec(w, h, channels, data)
}

fn planar<T: Copy>(raw: &[T], n: usize, f: impl Fn(T) -> f32) -> Vec<f32> {
    let mut out = vec![0.0f32; n * 3];
    for i in 0..n {
        for c in 0..3 {
            out[c * n + i] = f(raw[i * 3 + c]);
        }
    }
    out
}

fn dir_error(path: &Path, message: impl Into<String>) -> Error {
    Error::FrameDirectory {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Writes `frames` and a manifest into `dir` (created if needed).
pub fn write_frames(dir: &Path, frames: &[Image], manifest_base: &Manifest) -> Result<()> {
    let first = frames.first().ok_or_else(|| dir_error(dir, "no frames to write"))?;
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        width: first.width(),
        height: first.height(),
        count: frames.len(),
        channels: first.channels(),
        ..manifest_base.clone()
    };
    for (i, f) in frames.iter().enumerate() {
        write_png(&dir.join(frame_name(i)), f, manifest.bit_depth)?;
    }
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(dir.join(MANIFEST), text + "\n")?;
    Ok(())
}

pub fn write_clip(dir: &Path, clip: &VideoClip, depth: BitDepth) -> Result<()> {
    let manifest = Manifest {
        width: clip.width(),
        height: clip.height(),
        count: clip.len(),
        shutter: clip.shutter,
        rows: clip.rows,
        channels: clip.channels(),
        readout: clip.readout,
        bit_depth: depth,
    };
    write_frames(dir, &clip.frames, &manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Err(Error::MissingResource(path));
    }
    let text = fs::read_to_string(&path)?;
    serde_json::from_str(&text).map_err(|e| dir_error(dir, format!("bad manifest: {e}")))
}

/// Reads a frame directory, checking numbering and dimensions against the manifest.
pub fn read_frames(dir: &Path) -> Result<(Manifest, Vec<Image>)> {
    let manifest = read_manifest(dir)?;
    let mut pngs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    pngs.sort();
    if pngs.len() != manifest.count {
        return Err(dir_error(
            dir,
            format!("manifest lists {} frames, found {}", manifest.count, pngs.len()),
        ));
    }
    let mut frames = Vec::with_capacity(manifest.count);
    for (i, p) in pngs.iter().enumerate() {
        if p.file_name().and_then(|n| n.to_str()) != Some(frame_name(i).as_str()) {
            return Err(dir_error(dir, format!("expected {} in sequence", frame_name(i))));
        }
        let img = read_png(p, manifest.channels)?;
        if img.width() != manifest.width || img.height() != manifest.height {
            return Err(dir_error(
                dir,
                format!(
                    "{} is {}x{}, manifest says {}x{}",
                    frame_name(i),
                    img.width(),
                    img.height(),
                    manifest.width,
                    manifest.height
                ),
            ));
        }
        frames.push(img);
    }
    Ok((manifest, frames))
}

pub fn read_clip(dir: &Path) -> Result<VideoClip> {
    let (m, frames) = read_frames(dir)?;
    VideoClip::with_rows(frames, m.shutter, m.rows, m.readout)
}
