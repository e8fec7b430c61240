//! Scene descriptions for the procedural renderer.
//!
//! Scenes are 2D layer stacks: a background plus elements drawn in list
//! order (later elements on top). Every layer follows an analytic motion model
//! evaluated at continuous time, measured in frame periods.

use nalgebra::{Matrix2, Matrix3, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Readout;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    /// GS/RS frames per clip (`K`).
    pub frames: usize,
    /// Stored volume frames per frame period (`R`).
    pub oversampling: usize,
    /// Readout rows per frame period; defaults to `height`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[serde(default)]
    pub readout: Readout,
    pub background: Background,
    #[serde(default, rename = "element", skip_serializing_if = "Vec::is_empty")]
    pub elements: Vec<Element>,
    /// Element centers further than this outside the canvas raise a warning.
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_channels() -> usize {
    3
}

fn default_margin() -> f64 {
    16.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Background {
    Flat {
        color: [f32; 3],
    },
    Texture {
        texture: TextureSpec,
        #[serde(default)]
        motion: Motion,
    },
}

/// Smooth value-noise texture.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureSpec {
    pub id: u64,
    /// Lattice spacing of the coarsest octave, in pixels.
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_octaves")]
    pub octaves: u32,
    /// Peak-to-peak intensity range around mid-gray.
    #[serde(default = "default_contrast")]
    pub contrast: f32,
}

fn default_scale() -> f64 {
    16.0
}

fn default_octaves() -> u32 {
    3
}

fn default_contrast() -> f32 {
    0.8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub shape: Shape,
    pub fill: Fill,
    /// Position of the shape origin at t = 0.
    pub center: [f64; 2],
    #[serde(default)]
    pub motion: Motion,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub articulation: Option<Articulation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Disc {
        radius: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hole: Option<Hole>,
    },
    Rect {
        half_width: f64,
        half_height: f64,
    },
}

/// A transparent circular cut-out, offset from the shape origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hole {
    pub offset: [f64; 2],
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Fill {
    Flat { color: [f32; 3] },
    Texture { texture: TextureSpec },
}

/// Per-frame motion models. Rotation, zoom and affine motions act about
/// `center` when given, otherwise about the layer's own origin (the canvas
/// center for backgrounds).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Motion {
    #[default]
    Static,
    Translation {
        velocity: [f64; 2],
    },
    Rotation {
        omega: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<[f64; 2]>,
    },
    Zoom {
        /// Relative scale change per frame (0.01 = 1% growth).
        rate: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<[f64; 2]>,
    },
    /// Infinitesimal generator `[a, b, tx, c, d, ty]`; the transform after time
    /// `t` is `exp(t·G)`.
    Affine {
        generator: [f64; 6],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<[f64; 2]>,
    },
}

/// Sinusoidal limb-like deformation: local x is displaced by
/// `amplitude · sin(2π(frequency·t + y / wavelength))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Articulation {
    pub amplitude: f64,
    pub frequency: f64,
    #[serde(default = "default_wavelength")]
    pub wavelength: f64,
}

fn default_wavelength() -> f64 {
    24.0
}

/// A rigid 2D affine map `p ↦ A p + b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Placement {
    pub linear: Matrix2<f64>,
    pub offset: Vector2<f64>,
}

impl Placement {
    pub fn identity() -> Self {
        Self {
            linear: Matrix2::identity(),
            offset: Vector2::zeros(),
        }
    }

    pub fn apply(&self, p: Vector2<f64>) -> Vector2<f64> {
        self.linear * p + self.offset
    }

    pub fn inverse(&self) -> Option<Self> {
        let inv = self.linear.try_inverse()?;
        Some(Self {
            linear: inv,
            offset: -(inv * self.offset),
        })
    }

    fn about(center: Vector2<f64>, linear: Matrix2<f64>) -> Self {
        Self {
            linear,
            offset: center - linear * center,
        }
    }
}

impl Motion {
    /// Where the motion has carried the layer after `t` frame periods.
    pub fn placement(&self, t: f64, origin: Vector2<f64>) -> Placement {
        let pivot = |c: &Option<[f64; 2]>| c.map(Vector2::from).unwrap_or(origin);
        match self {
            Motion::Static => Placement::identity(),
            Motion::Translation { velocity } => Placement {
                linear: Matrix2::identity(),
                offset: Vector2::from(*velocity) * t,
            },
            Motion::Rotation { omega, center } => {
                let (s, c) = (omega * t).sin_cos();
                Placement::about(pivot(center), Matrix2::new(c, -s, s, c))
            }
            Motion::Zoom { rate, center } => {
                let scale = (1.0 + rate).powf(t);
                Placement::about(pivot(center), Matrix2::identity() * scale)
            }
            Motion::Affine { generator, center } => {
                let g = generator;
                let gen = Matrix3::new(g[0], g[1], g[2], g[3], g[4], g[5], 0.0, 0.0, 0.0) * t;
                let m = gen.exp();
                let linear = Matrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
                let base = Placement::about(pivot(center), linear);
                Placement {
                    linear,
                    offset: base.offset + Vector2::new(m[(0, 2)], m[(1, 2)]),
                }
            }
        }
    }

    fn parameters(&self) -> Vec<f64> {
        match self {
            Motion::Static => vec![],
            Motion::Translation { velocity } => velocity.to_vec(),
            Motion::Rotation { omega, center } => {
                let mut v = vec![*omega];
                v.extend(center.iter().flatten());
                v
            }
            Motion::Zoom { rate, center } => {
                let mut v = vec![*rate];
                v.extend(center.iter().flatten());
                v
            }
            Motion::Affine { generator, center } => {
                let mut v = generator.to_vec();
                v.extend(center.iter().flatten());
                v
            }
        }
    }

    pub fn is_static(&self) -> bool {
        match self {
            Motion::Static => true,
            Motion::Translation { velocity } => velocity.iter().all(|v| *v == 0.0),
            Motion::Rotation { omega, .. } => *omega == 0.0,
            Motion::Zoom { rate, .. } => *rate == 0.0,
            Motion::Affine { generator, .. } => generator.iter().all(|v| *v == 0.0),
        }
    }
}

impl SceneSpec {
    pub fn rows(&self) -> usize {
        self.rows.unwrap_or(self.height)
    }

    /// Stored frames needed to cover every row time of `frames` RS frames.
    pub fn stored_frames(&self) -> usize {
        self.frames * self.oversampling + 1
    }

    pub fn canvas_center(&self) -> Vector2<f64> {
        Vector2::new((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Scene(m));
        if self.width < 2 || self.height < 2 {
            return fail(format!("canvas {}x{} too small", self.width, self.height));
        }
        if self.channels != 1 && self.channels != 3 {
            return fail(format!("channels must be 1 or 3, got {}", self.channels));
        }
        if self.frames == 0 {
            return fail("frames must be >= 1".into());
        }
        if self.rows() < 2 {
            return fail("rows must be >= 2".into());
        }
        if self.oversampling < self.height {
            return fail(format!(
                "oversampling {} must be >= height {}",
                self.oversampling, self.height
            ));
        }
        let mut params: Vec<f64> = vec![self.margin];
        if let Background::Texture { texture, motion } = &self.background {
            params.extend(motion.parameters());
            check_texture(texture)?;
        }
        for (i, e) in self.elements.iter().enumerate() {
            params.extend(e.center);
            params.extend(e.motion.parameters());
            match &e.shape {
                Shape::Disc { radius, hole } => {
                    if *radius <= 0.0 {
                        return fail(format!("element {i}: radius must be positive"));
                    }
                    if let Some(h) = hole {
                        params.extend(h.offset);
                        params.push(h.radius);
                    }
                }
                Shape::Rect {
                    half_width,
                    half_height,
                } => {
                    if *half_width <= 0.0 || *half_height <= 0.0 {
                        return fail(format!("element {i}: rect extents must be positive"));
                    }
                }
            }
            if let Fill::Texture { texture } = &e.fill {
                check_texture(texture)?;
            }
            if let Some(a) = &e.articulation {
                params.extend([a.amplitude, a.frequency, a.wavelength]);
                if a.wavelength == 0.0 {
                    return fail(format!("element {i}: articulation wavelength is zero"));
                }
            }
        }
        if params.iter().any(|v| !v.is_finite()) {
            return fail("non-finite scene parameter".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SceneSpec = toml::from_str(text).map_err(|e| Error::Scene(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scene specs always serialize")
    }
}

fn check_texture(t: &TextureSpec) -> Result<()> {
    if !(t.scale >= 1.0 && t.scale.is_finite()) || t.octaves == 0 || !t.contrast.is_finite() {
        return Err(Error::Scene(format!(
            "texture {}: scale must be >= 1 and octaves >= 1",
            t.id
        )));
    }
    Ok(())
}
