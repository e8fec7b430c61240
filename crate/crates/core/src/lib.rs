//! Rolling-shutter simulation and rectification.
//!
//! A rolling-shutter (RS) video and its global-shutter (GS) counterpart are two
//! samplings of one space-time volume. The pipeline here reconstructs GS frames
//! from RS input in three stages:
//!
//! 1. [`interp`]: temporally upsample each RS frame pair ×N and compose GS
//!    proposals by taking row `j` from the interpolated frame at offset `(N - j)/N`.
//! 2. [`ensemble`]: repeat stage 1 under 16 time/rotation/flip augmentations and
//!    merge the proposals with a small residual CNN.
//! 3. [`refine`]: pull the output's 7×3 xt-patches toward their nearest
//!    neighbors in the RS input.
//!
//! [`synth`] renders paired RS/GS benchmark clips and [`metrics`] scores them.

pub mod augment;
pub mod ensemble;
pub mod error;
pub mod image;
pub mod interp;
pub mod io;
pub mod metrics;
pub mod patches;
pub mod refine;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};
pub use image::Image;
pub use volume::{Readout, Shutter, SpaceTimeVolume, VideoClip, VolumeSource};
