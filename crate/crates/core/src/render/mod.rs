//! Rendering trajectories into small RGB video clips.

mod background;
mod clip;
mod ppm;

pub use background::{BackgroundSet, NUM_BACKGROUNDS};
pub use clip::{coverage_mask, render_frame, render_video, sample_style, sample_window, sample_window_start, RenderStyle, VideoClip, CLIP_FRAMES, FRAME_STRIDE};
pub use ppm::Image;

/// Frame width and height in pixels.
pub const FRAME_SIZE: usize = 64;
/// Values per flattened frame.
pub const FRAME_LEN: usize = FRAME_SIZE * FRAME_SIZE * 3;
/// Splat radius of one particle, in pixels.
pub const PARTICLE_RADIUS_PX: f64 = 1.5;
/// Minimum L∞ distance between a material colour and its background's mean.
pub const COLOR_CONTRAST: f64 = 0.15;

/// A 64×64 RGB frame.
pub type Frame = Image;
