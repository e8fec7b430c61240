//! Procedural renderer for layered 2D scenes.

use std::borrow::Cow;
use std::collections::HashMap;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::scene::{Background, Element, Fill, Placement, SceneSpec, Shape, TextureSpec};
use crate::error::Result;
use crate::image::{Image, LUMA_WEIGHTS};
use crate::volume::{SpaceTimeVolume, VolumeSource};

const TEXTURE_SIZE: usize = 256;

/// 2×2 supersampling offsets inside a pixel.
const SUBSAMPLES: [(f64, f64); 4] = [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)];

fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A periodic raster of smooth value noise, one plane per channel.
#[derive(Debug)]
struct Texture {
    planes: Vec<Vec<f32>>,
}

impl Texture {
    fn generate(spec: &TextureSpec, channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, spec.id));
        let shared = noise_plane(spec, &mut rng);
        let planes = if channels == 1 {
            vec![shared]
        } else {
            (0..channels)
                .map(|_| {
                    let own = noise_plane(spec, &mut rng);
                    shared.iter().zip(&own).map(|(s, o)| 0.6 * s + 0.4 * o).collect()
                })
                .collect()
        };
        let planes = planes
            .into_iter()
            .map(|p: Vec<f32>| {
                let lo = p.iter().copied().fold(f32::INFINITY, f32::min);
                let hi = p.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let span = (hi - lo).max(1e-6);
                p.iter()
                    .map(|v| 0.5 + spec.contrast * ((v - lo) / span - 0.5))
                    .collect()
            })
            .collect();
        Self { planes }
    }

    /// Bilinear lookup with wrap-around, in texture pixels.
    fn sample(&self, c: usize, u: f64, v: f64) -> f32 {
        let n = TEXTURE_SIZE as f64;
        let u = u.rem_euclid(n);
        let v = v.rem_euclid(n);
        let x0 = u.floor();
        let y0 = v.floor();
        let fx = (u - x0) as f32;
        let fy = (v - y0) as f32;
        let x0 = x0 as usize % TEXTURE_SIZE;
        let y0 = y0 as usize % TEXTURE_SIZE;
        let x1 = (x0 + 1) % TEXTURE_SIZE;
        let y1 = (y0 + 1) % TEXTURE_SIZE;
        let p = &self.planes[c];
        let at = |x: usize, y: usize| p[y * TEXTURE_SIZE + x];
        let top = at(x0, y0) + fx * (at(x1, y0) - at(x0, y0));
        let bottom = at(x0, y1) + fx * (at(x1, y1) - at(x0, y1));
        top + fy * (bottom - top)
    }
}

fn noise_plane(spec: &TextureSpec, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut out = vec![0.0f32; TEXTURE_SIZE * TEXTURE_SIZE];
    let mut amplitude = 1.0f32;
    let mut spacing = spec.scale;
    for _ in 0..spec.octaves {
        let cells = ((TEXTURE_SIZE as f64 / spacing).round() as usize).max(1);
        let lattice: Vec<f32> = (0..cells * cells).map(|_| rng.gen::<f32>()).collect();
        let step = cells as f64 / TEXTURE_SIZE as f64;
        for y in 0..TEXTURE_SIZE {
            let gy = y as f64 * step;
            let cy = gy.floor() as usize;
            let ty = smoothstep(gy - cy as f64);
            let (y0, y1) = (cy % cells, (cy + 1) % cells);
            for x in 0..TEXTURE_SIZE {
                let gx = x as f64 * step;
                let cx = gx.floor() as usize;
                let tx = smoothstep(gx - cx as f64);
                let (x0, x1) = (cx % cells, (cx + 1) % cells);
                let a = lattice[y0 * cells + x0];
                let b = lattice[y0 * cells + x1];
                let c = lattice[y1 * cells + x0];
                let d = lattice[y1 * cells + x1];
                let top = a + tx * (b - a);
                let bottom = c + tx * (d - c);
                out[y * TEXTURE_SIZE + x] += amplitude * (top + ty * (bottom - top));
            }
        }
        amplitude *= 0.5;
        spacing = (spacing / 2.0).max(2.0);
    }
    out
}

fn smoothstep(t: f64) -> f32 {
    (t * t * (3.0 - 2.0 * t)) as f32
}

/// Which layer is visible at a point, and where on that layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Surface {
    /// 0 for the background, `i + 1` for element `i`.
    pub layer: usize,
    /// Layer-local coordinates (relative to the element origin).
    pub local: Vector2<f64>,
}

/// Layer placements frozen at one instant.
struct Instant<'a> {
    scene: &'a SceneVolume,
    t: f64,
    background: Option<Placement>,
    elements: Vec<Option<Placement>>,
}

impl Instant<'_> {
    fn surface(&self, p: Vector2<f64>) -> Surface {
        for (i, (e, inv)) in self.scene.spec.elements.iter().zip(&self.elements).enumerate().rev() {
            let Some(inv) = inv else { continue };
            let mut q = inv.apply(p) - Vector2::from(e.center);
            if let Some(a) = &e.articulation {
                let phase = 2.0 * std::f64::consts::PI * (a.frequency * self.t + q.y / a.wavelength);
                q.x -= a.amplitude * phase.sin();
            }
            if contains(&e.shape, q) {
                return Surface { layer: i + 1, local: q };
            }
        }
        let local = self.background.map(|inv| inv.apply(p)).unwrap_or(p);
        Surface { layer: 0, local }
    }

    fn shade(&self, s: Surface, out: &mut [f32]) {
        let scene = self.scene;
        if s.layer == 0 {
            match &scene.spec.background {
                Background::Flat { color } => scene.write_color(color, out),
                Background::Texture { texture, .. } => {
                    let tex = &scene.textures[&texture.id];
                    for (c, o) in out.iter_mut().enumerate() {
                        *o = tex.sample(c, s.local.x, s.local.y);
                    }
                }
            }
            return;
        }
        match &scene.spec.elements[s.layer - 1].fill {
            Fill::Flat { color } => scene.write_color(color, out),
            Fill::Texture { texture } => {
                let tex = &scene.textures[&texture.id];
                let half = TEXTURE_SIZE as f64 / 2.0;
                for (c, o) in out.iter_mut().enumerate() {
                    *o = tex.sample(c, s.local.x + half, s.local.y + half);
                }
            }
        }
    }

    /// Antialiased pixel value at pixel center `(x, y)`.
    fn pixel(&self, x: usize, y: usize, out: &mut [f32]) {
        let ch = out.len();
        let mut acc = [0.0f32; 3];
        let mut tmp = [0.0f32; 3];
        for (dx, dy) in SUBSAMPLES {
            let p = Vector2::new(x as f64 + dx, y as f64 + dy);
            self.shade(self.surface(p), &mut tmp[..ch]);
            for c in 0..ch {
                acc[c] += tmp[c];
            }
        }
        for c in 0..ch {
            out[c] = acc[c] * 0.25;
        }
    }
}

fn contains(shape: &Shape, q: Vector2<f64>) -> bool {
    match shape {
        Shape::Disc { radius, hole } => {
            if q.norm_squared() > radius * radius {
                return false;
            }
            match hole {
                Some(h) => (q - Vector2::from(h.offset)).norm_squared() > h.radius * h.radius,
                None => true,
            }
        }
        Shape::Rect {
            half_width,
            half_height,
        } => q.x.abs() <= *half_width && q.y.abs() <= *half_height,
    }
}

/// A scene evaluated lazily as a high-framerate volume.
///
/// Stored frame `s` shows the scene at time `s / R`. Rows and pixels are
/// rendered on demand, so rolling-shutter sampling only pays for the rows it
/// reads.
pub struct SceneVolume {
    spec: SceneSpec,
    textures: HashMap<u64, Texture>,
}

impl SceneVolume {
    pub fn new(spec: &SceneSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut textures = HashMap::new();
        let mut wanted: Vec<TextureSpec> = Vec::new();
        if let Background::Texture { texture, .. } = &spec.background {
            wanted.push(*texture);
        }
        wanted.extend(spec.elements.iter().filter_map(|e| match &e.fill {
            Fill::Texture { texture } => Some(*texture),
            Fill::Flat { .. } => None,
        }));
        for t in wanted {
            textures
                .entry(t.id)
                .or_insert_with(|| Texture::generate(&t, spec.channels, seed));
        }
        Ok(Self {
            spec: spec.clone(),
            textures,
        })
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    fn write_color(&self, color: &[f32; 3], out: &mut [f32]) {
        if out.len() == 1 {
            out[0] = color.iter().zip(LUMA_WEIGHTS).map(|(c, w)| c * w).sum();
        } else {
            out.copy_from_slice(color);
        }
    }

    fn instant(&self, t: f64) -> Instant<'_> {
        let background = match &self.spec.background {
            Background::Texture { motion, .. } => motion.placement(t, self.spec.canvas_center()).inverse(),
            Background::Flat { .. } => None,
        };
        let elements = self
            .spec
            .elements
            .iter()
            .map(|e| placement_of(e, t).inverse())
            .collect();
        Instant {
            scene: self,
            t,
            background,
            elements,
        }
    }

    fn time_of(&self, index: usize) -> f64 {
        index as f64 / self.spec.oversampling as f64
    }

    /// Renders the scene at an arbitrary time.
    pub fn render_at(&self, t: f64) -> Image {
        let (w, h, ch) = (self.spec.width, self.spec.height, self.spec.channels);
        let inst = self.instant(t);
        let mut img = Image::new(w, h, ch);
        let mut px = [0.0f32; 3];
        for y in 0..h {
            for x in 0..w {
                inst.pixel(x, y, &mut px[..ch]);
                for (c, &v) in px[..ch].iter().enumerate() {
                    img.set(x, y, c, v);
                }
            }
        }
        img
    }

    /// Visible layer at the pixel center `p` at time `t` (no antialiasing).
    pub fn surface_at(&self, p: Vector2<f64>, t: f64) -> Surface {
        self.instant(t).surface(p)
    }

    /// Canvas position of element `i`'s origin at time `t`.
    pub fn element_center(&self, i: usize, t: f64) -> [f64; 2] {
        let e = &self.spec.elements[i];
        let p = placement_of(e, t).apply(Vector2::from(e.center));
        [p.x, p.y]
    }

    /// Canvas position of a layer-local point at time `t`.
    pub fn local_to_canvas(&self, layer: usize, local: Vector2<f64>, t: f64) -> Vector2<f64> {
        if layer == 0 {
            return match &self.spec.background {
                Background::Texture { motion, .. } => motion.placement(t, self.spec.canvas_center()).apply(local),
                Background::Flat { .. } => local,
            };
        }
        let e = &self.spec.elements[layer - 1];
        let mut q = local;
        if let Some(a) = &e.articulation {
            let phase = 2.0 * std::f64::consts::PI * (a.frequency * t + q.y / a.wavelength);
            q.x += a.amplitude * phase.sin();
        }
        placement_of(e, t).apply(Vector2::from(e.center) + q)
    }

    /// Elements whose origin strays beyond the validity margin during the clip.
    pub fn margin_warnings(&self) -> Vec<String> {
        let s = &self.spec;
        let (lo_x, lo_y) = (-s.margin, -s.margin);
        let (hi_x, hi_y) = (s.width as f64 - 1.0 + s.margin, s.height as f64 - 1.0 + s.margin);
        let mut out = Vec::new();
        for i in 0..s.elements.len() {
            for k in 0..=s.frames {
                let [x, y] = self.element_center(i, k as f64);
                if x < lo_x || x > hi_x || y < lo_y || y > hi_y {
                    out.push(format!(
                        "element {i} leaves the validity margin at t = {k} ({x:.1}, {y:.1})"
                    ));
                    break;
                }
            }
        }
        out
    }
}

fn placement_of(e: &Element, t: f64) -> Placement {
    e.motion.placement(t, Vector2::from(e.center))
}

impl VolumeSource for SceneVolume {
    fn width(&self) -> usize {
        self.spec.width
    }
    fn height(&self) -> usize {
        self.spec.height
    }
    fn channels(&self) -> usize {
        self.spec.channels
    }
    fn oversampling(&self) -> usize {
        self.spec.oversampling
    }
    fn stored_frames(&self) -> usize {
        self.spec.stored_frames()
    }
    fn frame(&self, index: usize) -> Cow<'_, Image> {
        Cow::Owned(self.render_at(self.time_of(index)))
    }
    fn row(&self, index: usize, y: usize) -> Vec<f32> {
        let (w, ch) = (self.spec.width, self.spec.channels);
        let inst = self.instant(self.time_of(index));
        let mut out = vec![0.0f32; w * ch];
        let mut px = [0.0f32; 3];
        for x in 0..w {
            inst.pixel(x, y, &mut px[..ch]);
            for c in 0..ch {
                out[c * w + x] = px[c];
            }
        }
        out
    }
    fn pixel(&self, index: usize, x: usize, y: usize) -> Vec<f32> {
        let mut px = vec![0.0f32; self.spec.channels];
        self.instant(self.time_of(index)).pixel(x, y, &mut px);
        px
    }
}

/// A materialized volume plus the analytic element trajectories behind it.
#[derive(Debug)]
pub struct RenderedScene {
    pub volume: SpaceTimeVolume,
    /// `trajectories[i][s]`: origin of element `i` in stored frame `s`.
    pub trajectories: Vec<Vec<[f64; 2]>>,
    pub warnings: Vec<String>,
}

/// Renders every stored frame of the scene. Deterministic in `(spec, seed)`.
pub fn render_volume(spec: &SceneSpec, seed: u64) -> Result<RenderedScene> {
    let scene = SceneVolume::new(spec, seed)?;
    let n = spec.stored_frames();
    let frames: Vec<Image> = (0..n)
        .into_par_iter()
        .map(|s| scene.render_at(scene.time_of(s)))
        .collect();
    let trajectories = (0..spec.elements.len())
        .map(|i| (0..n).map(|s| scene.element_center(i, scene.time_of(s))).collect())
        .collect();
    Ok(RenderedScene {
        volume: SpaceTimeVolume::new(frames, spec.oversampling)?,
        trajectories,
        warnings: scene.margin_warnings(),
    })
}
