//! Quantitative evaluation, misalignment visualization and patch-recurrence
//! statistics.

mod quality;
mod recurrence;
mod report;
mod viz;

pub use quality::{mse, psnr, psnr_clip, psnr_frames, ssim, ssim_frames, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
pub use recurrence::{
    patch_ratios, recurrence_stats, recurrence_stats_with, summarize, PatchRatios, RecurrenceStats, RATIO_EPS,
    TOP_FRACTION,
};
pub use report::{evaluate, EvalReport, FrameScore};
pub use viz::{misalignment_frame, misalignment_viz};
