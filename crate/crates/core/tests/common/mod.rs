//! Cheap synthetic data shared by the trainer, evaluation and acceptance tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vdgns::mpm::{MaterialKind, MaterialSpec, Trajectory, Vec2};
use vdgns::render::{Image, VideoClip};
use vdgns::train::{ClassData, TrainingData};

/// Particles on a small lattice falling with a class-dependent acceleration
/// and a per-trajectory wobble.
pub fn synthetic_trajectory(kind: MaterialKind, n: usize, steps: usize, seed: u64) -> Trajectory {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let side = (n as f64).sqrt().ceil() as usize;
    let base: Vec<Vec2> = (0..n)
        .map(|i| [0.4 + 0.03 * (i % side) as f64 + r.random_range(-0.005..0.005), 0.6 + 0.03 * (i / side) as f64])
        .collect();
    let g = -0.2 * (1.0 + kind.id() as f64);
    let w = r.random_range(2.0..4.0);
    let mut pos = Vec::with_capacity(n * steps);
    for t in 0..steps {
        let tt = t as f64 * 0.01 / steps as f64 * 5.0;
        for (i, b) in base.iter().enumerate() {
            let phase = i as f64 * 0.7;
            pos.push([b[0] + 0.01 * (w * tt + phase).sin(), b[1] + 0.5 * g * tt * tt + 0.005 * (w * tt).cos()]);
        }
    }
    Trajectory::new(MaterialSpec::new(kind), n, pos, seed).unwrap()
}

/// Tiny clip whose colour depends on class and trajectory.
pub fn synthetic_clip(kind: MaterialKind, trajectory_id: usize, frames: usize, size: usize, seed: u64) -> VideoClip {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let tint = kind.id() as f64 / 4.0;
    VideoClip {
        frames: (0..frames)
            .map(|k| {
                let mut img = Image::filled(size, size, [tint, 0.5, 1.0 - tint]);
                for v in img.values.iter_mut() {
                    *v = (*v + 0.1 * r.random_range(-1.0..1.0) + 0.01 * k as f64).clamp(0.0, 1.0);
                }
                img
            })
            .collect(),
        class: kind,
        trajectory_id: trajectory_id as u32,
        style: None,
    }
}

/// `per_class` trajectories with one clip each for every class.
pub fn synthetic_data(per_class: usize, particles: usize, steps: usize, frame_size: usize, clip_frames: usize) -> TrainingData {
    let classes = MaterialKind::ALL
        .iter()
        .map(|&kind| {
            let ids: Vec<usize> = (0..per_class).map(|i| kind.id() as usize * per_class + i).collect();
            ClassData {
                kind,
                trajectories: ids.iter().map(|&id| (id, synthetic_trajectory(kind, particles, steps, id as u64))).collect(),
                clips: ids.iter().map(|&id| synthetic_clip(kind, id, clip_frames, frame_size, 1000 + id as u64)).collect(),
            }
        })
        .collect();
    TrainingData::new(classes).unwrap()
}
