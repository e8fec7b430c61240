//! Procedural high-framerate scenes and paired RS/GS dataset generation.

mod dataset;
mod render;
mod scene;

pub use dataset::{
    make_pair, make_training_set, make_training_set_with, random_scene, Geometry, MotionFamily, PairedSample,
    DEGENERATE_PSNR_DB, MAX_OMEGA, MAX_SPEED, MAX_ZOOM,
};
pub use render::{render_volume, RenderedScene, SceneVolume, Surface};
pub use scene::{Articulation, Background, Element, Fill, Hole, Motion, Placement, SceneSpec, Shape, TextureSpec};
