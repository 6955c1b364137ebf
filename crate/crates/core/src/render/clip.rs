use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::background::BackgroundSet;
use super::ppm::{quantize, Image};
use super::{Frame, COLOR_CONTRAST, FRAME_LEN, FRAME_SIZE, PARTICLE_RADIUS_PX};
use crate::codec::{read_file, write_file, Reader, Writer};
use crate::dataset::USABLE_START;
use crate::error::{Error, Result};
use crate::mpm::{MaterialKind, Trajectory, Vec2};

/// Frames per clip: the usable four seconds at 20 fps.
pub const CLIP_FRAMES: usize = 80;
/// Simulation steps between consecutive frames.
pub const FRAME_STRIDE: usize = 5;

const MAGIC: &[u8; 4] = b"VDVC";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderStyle {
    pub material_color: [f64; 3],
    pub alpha: f64,
    pub background_id: usize,
}

/// Uniform background, alpha in `[0.5, 1]`, and a colour drawn uniformly from
/// the RGB cube until it is far enough from the background's mean colour.
pub fn sample_style<R: Rng + ?Sized>(rng: &mut R, backgrounds: &BackgroundSet) -> RenderStyle {
    let background_id = rng.random_range(0..backgrounds.len());
    let alpha = rng.random_range(0.5..=1.0);
    let mean = backgrounds.mean_color(background_id);
    let material_color = loop {
        let c: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..=1.0));
        let dist = (0..3).map(|i| (c[i] - mean[i]).abs()).fold(0.0, f64::max);
        if dist > COLOR_CONTRAST {
            break c;
        }
    };
    RenderStyle {
        material_color,
        alpha,
        background_id,
    }
}

/// Pixels covered by at least one particle disk.
pub fn coverage_mask(positions: &[Vec2]) -> Vec<bool> {
    let n = FRAME_SIZE as f64;
    let r2 = PARTICLE_RADIUS_PX * PARTICLE_RADIUS_PX;
    let mut mask = vec![false; FRAME_SIZE * FRAME_SIZE];
    for p in positions {
        let (px, py) = (p[0] * n, (1.0 - p[1]) * n);
        let lo = |v: f64| (v - PARTICLE_RADIUS_PX - 0.5).floor().max(0.0) as usize;
        let hi = |v: f64| ((v + PARTICLE_RADIUS_PX - 0.5).ceil().max(0.0) as usize).min(FRAME_SIZE - 1);
        for row in lo(py)..=hi(py) {
            for col in lo(px)..=hi(px) {
                let (dx, dy) = (col as f64 + 0.5 - px, row as f64 + 0.5 - py);
                if dx * dx + dy * dy <= r2 {
                    mask[row * FRAME_SIZE + col] = true;
                }
            }
        }
    }
    mask
}

/// Splats particles as disks and alpha-composites them over the background.
pub fn render_frame(positions: &[Vec2], style: &RenderStyle, backgrounds: &BackgroundSet) -> Frame {
    let mut frame = backgrounds.image(style.background_id).clone();
    let a = style.alpha;
    for (i, covered) in coverage_mask(positions).into_iter().enumerate() {
        if covered {
            for c in 0..3 {
                let v = &mut frame.values[i * 3 + c];
                *v = a * style.material_color[c] + (1.0 - a) * *v;
            }
        }
    }
    frame
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub frames: Vec<Frame>,
    pub class: MaterialKind,
    pub trajectory_id: u32,
    /// Known for freshly rendered clips; not stored on disk.
    pub style: Option<RenderStyle>,
}

/// Renders every fifth step of the usable range with one sampled style.
pub fn render_video<R: Rng + ?Sized>(
    traj: &Trajectory,
    trajectory_id: u32,
    style_rng: &mut R,
    backgrounds: &BackgroundSet,
) -> Result<VideoClip> {
    if traj.steps() <= USABLE_START {
        return Err(Error::Range(format!(
            "trajectory has {} steps, usable range starts at {USABLE_START}",
            traj.steps()
        )));
    }
    let style = sample_style(style_rng, backgrounds);
    let frames = (USABLE_START..traj.steps())
        .step_by(FRAME_STRIDE)
        .map(|t| render_frame(traj.frame(t), &style, backgrounds))
        .collect();
    Ok(VideoClip {
        frames,
        class: traj.class(),
        trajectory_id,
        style: Some(style),
    })
}

/// A contiguous window of `n` frames starting at a uniform offset.
pub fn sample_window<'c, R: Rng + ?Sized>(clip: &'c VideoClip, n: usize, rng: &mut R) -> Result<&'c [Frame]> {
    let start = sample_window_start(clip.frames.len(), n, rng)?;
    Ok(&clip.frames[start..start + n])
}

/// Uniform start of an `n`-frame window inside a `len`-frame clip.
pub fn sample_window_start<R: Rng + ?Sized>(len: usize, n: usize, rng: &mut R) -> Result<usize> {
    if n == 0 || n > len {
        return Err(Error::Range(format!("window of {n} frames from a {len}-frame clip")));
    }
    Ok(rng.random_range(0..=len - n))
}

impl VideoClip {
    /// Frames as they read back from disk (8-bit quantized).
    pub fn quantized(&self) -> VideoClip {
        VideoClip {
            frames: self
                .frames
                .iter()
                .map(|f| Image {
                    width: f.width,
                    height: f.height,
                    values: f.values.iter().map(|&v| quantize(v) as f64 / 255.0).collect(),
                })
                .collect(),
            ..self.clone()
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u32(self.class.id());
        w.u32(self.trajectory_id);
        w.u32(self.frames.len() as u32);
        for f in &self.frames {
            let q: Vec<u8> = f.values.iter().map(|&v| quantize(v)).collect();
            w.bytes(&q);
        }
        w.finish()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader::new("video clip", data);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let class = MaterialKind::from_id(r.u32()?).map_err(|e| r.err(e.to_string()))?;
        let trajectory_id = r.u32()?;
        let count = r.u32()? as usize;
        let mut frames = Vec::with_capacity(count);
        for _ in 0..count {
            let raw = r.take(FRAME_LEN)?;
            frames.push(Image {
                width: FRAME_SIZE,
                height: FRAME_SIZE,
                values: raw.iter().map(|&b| b as f64 / 255.0).collect(),
            });
        }
        r.finish()?;
        Ok(VideoClip {
            frames,
            class,
            trajectory_id,
            style: None,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        VideoClip::from_bytes(&read_file(path)?)
    }
}
