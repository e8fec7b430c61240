//! Paired RS/GS sample generation.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::render::SceneVolume;
use super::scene::{Articulation, Background, Element, Fill, Motion, SceneSpec, Shape, TextureSpec};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics;
use crate::volume::{sample_gs, sample_rs, VideoClip, VolumeSource};

/// Aligned GS/RS clips of one scene.
#[derive(Clone, Debug)]
pub struct PairedSample {
    pub gs: VideoClip,
    pub rs: VideoClip,
    /// One mask per RS frame: 1 where the surface point stays visible in the
    /// neighboring RS frame (the next one, or the previous one for the last frame).
    pub occlusion_masks: Option<Vec<Image>>,
    pub provenance: SceneSpec,
    pub seed: u64,
    pub warnings: Vec<String>,
}

/// Renders a scene and samples it with both shutters.
pub fn make_pair(spec: &SceneSpec, seed: u64) -> Result<PairedSample> {
    let scene = SceneVolume::new(spec, seed)?;
    if !spec.oversampling.is_multiple_of(spec.rows()) {
        return Err(Error::Scene(format!(
            "oversampling {} must be a multiple of rows {}",
            spec.oversampling,
            spec.rows()
        )));
    }
    let gs = sample_gs(&scene, spec.frames)?;
    let rs = sample_rs(&scene, spec.frames, spec.readout, Some(spec.rows()))?;
    let masks = occlusion_masks(&scene, &rs);
    Ok(PairedSample {
        gs,
        rs,
        occlusion_masks: Some(masks),
        provenance: spec.clone(),
        seed,
        warnings: scene.margin_warnings(),
    })
}

fn occlusion_masks(scene: &SceneVolume, rs: &VideoClip) -> Vec<Image> {
    let (w, h, k) = (scene.width(), scene.height(), rs.len());
    (0..k)
        .into_par_iter()
        .map(|frame| {
            let Some(other) = (if frame + 1 < k {
                Some(frame + 1)
            } else {
                frame.checked_sub(1)
            }) else {
                return Image::filled(w, h, 1, 1.0);
            };
            Image::from_fn(w, h, 1, |x, y, _| {
                let t0 = rs.timestamp(frame, x, y);
                let p = Vector2::new(x as f64, y as f64);
                let here = scene.surface_at(p, t0);
                let visible = reappears(scene, rs, here.layer, here.local, t0, other, frame);
                if visible {
                    1.0
                } else {
                    0.0
                }
            })
        })
        .collect()
}

/// Follows a surface point into RS frame `other` and checks that it is still
/// the visible layer there.
fn reappears(
    scene: &SceneVolume,
    rs: &VideoClip,
    layer: usize,
    local: Vector2<f64>,
    t0: f64,
    other: usize,
    frame: usize,
) -> bool {
    let (w, h) = (scene.width() as f64, scene.height() as f64);
    let inside = |p: Vector2<f64>| p.x >= -0.5 && p.x < w - 0.5 && p.y >= -0.5 && p.y < h - 0.5;
    // Nominal position one frame period away, then snap to the row time of
    // the frame the point lands in.
    let dt = other as f64 - frame as f64;
    let p1 = scene.local_to_canvas(layer, local, t0 + dt);
    if !inside(p1) {
        return false;
    }
    let (xi, yi) = (p1.x.round() as usize, p1.y.round() as usize);
    let t1 = rs.timestamp(other, xi.min(scene.width() - 1), yi.min(scene.height() - 1));
    let p1 = scene.local_to_canvas(layer, local, t1);
    if !inside(p1) {
        return false;
    }
    scene.surface_at(p1, t1).layer == layer
}

/// Clip geometry used for generated datasets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub frames: usize,
    pub oversampling: usize,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            channels: 3,
            frames: 12,
            oversampling: 128,
        }
    }
}

impl Geometry {
    pub fn square(size: usize, channels: usize, frames: usize) -> Self {
        Self {
            width: size,
            height: size,
            channels,
            frames,
            oversampling: size,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionFamily {
    /// Global affine camera motion plus independently translating sprites.
    Affine,
    Translation,
    Rotation,
    Zoom,
    NonRigid,
}

impl MotionFamily {
    pub const ALL: [MotionFamily; 5] = [
        MotionFamily::Affine,
        MotionFamily::Translation,
        MotionFamily::Rotation,
        MotionFamily::Zoom,
        MotionFamily::NonRigid,
    ];
}

/// Largest translation speed drawn for generated scenes, px/frame.
pub const MAX_SPEED: f64 = 4.0;
/// Largest rotation rate drawn for generated scenes, rad/frame.
pub const MAX_OMEGA: f64 = 0.05;
/// Largest relative zoom per frame drawn for generated scenes.
pub const MAX_ZOOM: f64 = 0.02;
/// Draws whose RS/GS PSNR reaches this are considered motionless and redrawn.
pub const DEGENERATE_PSNR_DB: f64 = 40.0;

fn texture(rng: &mut ChaCha8Rng, id: u64) -> TextureSpec {
    TextureSpec {
        id,
        scale: rng.gen_range(12.0..28.0),
        octaves: 3,
        contrast: rng.gen_range(0.6..0.9),
    }
}

fn velocity(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 2] {
    let speed = rng.gen_range(lo..hi);
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    [speed * angle.cos(), speed * angle.sin()]
}

fn signed(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let v = rng.gen_range(lo..hi);
    if rng.gen_bool(0.5) {
        v
    } else {
        -v
    }
}

fn sprite(rng: &mut ChaCha8Rng, geom: &Geometry, id: u64, motion: Motion) -> Element {
    let s = geom.width.min(geom.height) as f64;
    let shape = if rng.gen_bool(0.5) {
        Shape::Rect {
            half_width: rng.gen_range(0.08..0.18) * s,
            half_height: rng.gen_range(0.08..0.18) * s,
        }
    } else {
        Shape::Disc {
            radius: rng.gen_range(0.1..0.2) * s,
            hole: None,
        }
    };
    Element {
        shape,
        fill: Fill::Texture {
            texture: texture(rng, id),
        },
        center: [
            rng.gen_range(0.3..0.7) * geom.width as f64,
            rng.gen_range(0.3..0.7) * geom.height as f64,
        ],
        motion,
        articulation: None,
    }
}

/// Draws one random scene of the given motion family.
pub fn random_scene(geom: &Geometry, family: MotionFamily, rng: &mut ChaCha8Rng) -> SceneSpec {
    let bg_texture = texture(rng, 1);
    let (bg_motion, elements) = match family {
        MotionFamily::Affine => {
            let [vx, vy] = velocity(rng, 0.5, MAX_SPEED);
            let omega = rng.gen_range(-MAX_OMEGA..MAX_OMEGA);
            let zoom = (1.0 + rng.gen_range(-MAX_ZOOM..MAX_ZOOM)).ln();
            let shear = rng.gen_range(-0.01..0.01);
            let motion = Motion::Affine {
                generator: [zoom, shear - omega, vx, omega, zoom, vy],
                center: None,
            };
            let n = rng.gen_range(0..=2);
            let els = (0..n)
                .map(|i| {
                    let v = velocity(rng, 0.5, MAX_SPEED);
                    sprite(rng, geom, 10 + i, Motion::Translation { velocity: v })
                })
                .collect();
            (motion, els)
        }
        MotionFamily::Translation => {
            let motion = Motion::Translation {
                velocity: velocity(rng, 0.5, MAX_SPEED),
            };
            let v = velocity(rng, 0.5, MAX_SPEED);
            (motion, vec![sprite(rng, geom, 10, Motion::Translation { velocity: v })])
        }
        MotionFamily::Rotation => {
            let motion = Motion::Rotation {
                omega: signed(rng, 0.01, MAX_OMEGA),
                center: None,
            };
            let r = 0.2 * geom.width.min(geom.height) as f64;
            let spinner = Element {
                shape: Shape::Disc {
                    radius: r,
                    hole: Some(super::scene::Hole {
                        offset: [0.55 * r, 0.0],
                        radius: 0.25 * r,
                    }),
                },
                fill: Fill::Texture {
                    texture: texture(rng, 10),
                },
                center: [geom.width as f64 / 2.0, geom.height as f64 / 2.0],
                motion: Motion::Rotation {
                    omega: signed(rng, 0.05, 0.15),
                    center: None,
                },
                articulation: None,
            };
            (motion, vec![spinner])
        }
        MotionFamily::Zoom => {
            let motion = Motion::Zoom {
                rate: signed(rng, 0.005, MAX_ZOOM),
                center: None,
            };
            // Zoom alone barely moves small frames; a sprite keeps draws non-degenerate.
            let v = velocity(rng, 0.5, MAX_SPEED);
            (motion, vec![sprite(rng, geom, 10, Motion::Translation { velocity: v })])
        }
        MotionFamily::NonRigid => {
            let motion = Motion::Translation {
                velocity: velocity(rng, 0.0, 1.0),
            };
            let els = (0..2)
                .map(|i| {
                    let v = velocity(rng, 0.5, 2.0);
                    let mut e = sprite(rng, geom, 10 + i, Motion::Translation { velocity: v });
                    e.articulation = Some(Articulation {
                        amplitude: rng.gen_range(2.0..5.0),
                        frequency: rng.gen_range(0.08..0.2),
                        wavelength: rng.gen_range(16.0..32.0),
                    });
                    e
                })
                .collect();
            (motion, els)
        }
    };
    SceneSpec {
        width: geom.width,
        height: geom.height,
        channels: geom.channels,
        frames: geom.frames,
        oversampling: geom.oversampling,
        rows: None,
        readout: Default::default(),
        background: Background::Texture {
            texture: bg_texture,
            motion: bg_motion,
        },
        elements,
        margin: default_margin(geom),
    }
}

fn default_margin(geom: &Geometry) -> f64 {
    0.25 * geom.width.max(geom.height) as f64
}

const MAX_REDRAWS: u64 = 32;

/// Generates `count` pairs of the default desk-scale geometry.
pub fn make_training_set(count: usize, seed: u64, family: MotionFamily) -> Result<Vec<PairedSample>> {
    make_training_set_with(&Geometry::default(), count, seed, family)
}

/// Generates `count` randomized pairs; deterministic given `seed`. Draws whose
/// RS and GS clips are nearly identical are redrawn.
pub fn make_training_set_with(
    geom: &Geometry,
    count: usize,
    seed: u64,
    family: MotionFamily,
) -> Result<Vec<PairedSample>> {
    if count == 0 {
        return Err(Error::Config("training set needs at least one sample".into()));
    }
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            for attempt in 0..MAX_REDRAWS {
                let sub = seed
                    .wrapping_mul(0x2545_F491_4F6C_DD1D)
                    .wrapping_add(i * MAX_REDRAWS + attempt);
                let mut rng = ChaCha8Rng::seed_from_u64(sub);
                let spec = random_scene(geom, family, &mut rng);
                let pair = make_pair(&spec, sub)?;
                if metrics::psnr_clip(&pair.rs, &pair.gs, None)? < DEGENERATE_PSNR_DB {
                    return Ok(pair);
                }
            }
            Err(Error::Scene(format!(
                "sample {i}: no non-degenerate draw in {MAX_REDRAWS} attempts"
            )))
        })
        .collect()
}
