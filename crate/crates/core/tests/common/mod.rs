#![allow(dead_code)]

use std::sync::Arc;

use rsunroll::interp::OracleInterpolator;
use rsunroll::synth::{make_pair, PairedSample, SceneSpec, SceneVolume};
use rsunroll::{Image, Shutter, VideoClip};

pub fn scene(size: usize, frames: usize, motion: &str) -> SceneSpec {
    let text = format!(
        r#"
width = {size}
height = {size}
frames = {frames}
oversampling = {size}

[background]
kind = "texture"
texture = {{ id = 3, scale = 14.0 }}
motion = {motion}
"#
    );
    SceneSpec::from_toml(&text).unwrap()
}

pub fn translation(size: usize, frames: usize, vx: f64, vy: f64) -> SceneSpec {
    scene(
        size,
        frames,
        &format!(r#"{{ kind = "translation", velocity = [{vx}, {vy}] }}"#),
    )
}

pub fn rotation(size: usize, frames: usize, omega: f64) -> SceneSpec {
    scene(size, frames, &format!(r#"{{ kind = "rotation", omega = {omega} }}"#))
}

pub fn zoom(size: usize, frames: usize, rate: f64) -> SceneSpec {
    scene(size, frames, &format!(r#"{{ kind = "zoom", rate = {rate} }}"#))
}

/// Translating background with a textured disc moving the other way.
pub fn with_sprite(size: usize, frames: usize) -> SceneSpec {
    let c = size as f64 / 2.0;
    let text = format!(
        r#"
width = {size}
height = {size}
frames = {frames}
oversampling = {size}

[background]
kind = "texture"
texture = {{ id = 5, scale = 14.0 }}
motion = {{ kind = "translation", velocity = [1.3, 0.4] }}

[[element]]
shape = {{ kind = "disc", radius = {r} }}
fill = {{ kind = "texture", texture = {{ id = 9, scale = 8.0, contrast = 0.9 }} }}
center = [{c}, {c}]
motion = {{ kind = "translation", velocity = [-2.2, 0.7] }}
"#,
        r = size as f64 / 5.0
    );
    SceneSpec::from_toml(&text).unwrap()
}

pub fn pair(spec: &SceneSpec, seed: u64) -> PairedSample {
    make_pair(spec, seed).unwrap()
}

pub fn oracle(spec: &SceneSpec, seed: u64) -> OracleInterpolator {
    let vol = SceneVolume::new(spec, seed).unwrap();
    OracleInterpolator::new(Arc::new(vol), spec.rows()).unwrap()
}

pub fn tail(clip: &VideoClip) -> VideoClip {
    VideoClip::new(clip.frames[1..].to_vec(), Shutter::Global).unwrap()
}

pub fn static_clip(w: usize, h: usize, k: usize, shutter: Shutter) -> VideoClip {
    let img = Image::from_fn(w, h, 3, |x, y, c| {
        0.5 + 0.3 * ((x as f32 * 0.4 + c as f32).sin() * (y as f32 * 0.3).cos())
    });
    VideoClip::new(vec![img; k], shutter).unwrap()
}
