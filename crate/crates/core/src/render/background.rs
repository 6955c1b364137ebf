use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ppm::Image;
use super::FRAME_SIZE;
use crate::error::{Error, Result};

pub const NUM_BACKGROUNDS: usize = 10;
const BUILTIN_SEED: u64 = 0x6267_7264;

/// The ten backdrop images particles are composited onto.
#[derive(Clone, Debug, PartialEq)]
pub struct BackgroundSet {
    images: Vec<Image>,
    means: Vec<[f64; 3]>,
}

impl BackgroundSet {
    pub fn from_images(images: Vec<Image>) -> Result<Self> {
        if images.len() != NUM_BACKGROUNDS {
            return Err(Error::Config(format!(
                "need exactly {NUM_BACKGROUNDS} backgrounds, got {}",
                images.len()
            )));
        }
        let images: Vec<Image> = images
            .into_iter()
            .map(|img| {
                if img.width == FRAME_SIZE && img.height == FRAME_SIZE {
                    img
                } else {
                    img.resize_bilinear(FRAME_SIZE, FRAME_SIZE)
                }
            })
            .collect();
        let means = images.iter().map(Image::mean_color).collect();
        Ok(BackgroundSet { images, means })
    }

    /// First ten `.ppm` files of `dir` in lexicographic order.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("ppm")))
            .collect();
        paths.sort();
        if paths.len() < NUM_BACKGROUNDS {
            return Err(Error::Config(format!(
                "{} contains {} PPM images, need at least {NUM_BACKGROUNDS}",
                dir.display(),
                paths.len()
            )));
        }
        let images = paths[..NUM_BACKGROUNDS]
            .iter()
            .map(|p| {
                Image::load_ppm(p).map_err(|e| match e {
                    Error::Parse { offset, msg, .. } => Error::Parse {
                        what: p.display().to_string(),
                        offset,
                        msg,
                    },
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        BackgroundSet::from_images(images)
    }

    /// Ten deterministic procedural textures: a two-colour gradient with soft blobs.
    pub fn builtin() -> Self {
        let images = (0..NUM_BACKGROUNDS as u64)
            .map(|k| procedural(&mut ChaCha8Rng::seed_from_u64(BUILTIN_SEED + k)))
            .collect();
        BackgroundSet::from_images(images).expect("builtin set has ten images")
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, id: usize) -> &Image {
        &self.images[id]
    }

    pub fn mean_color(&self, id: usize) -> [f64; 3] {
        self.means[id]
    }
}

fn procedural(rng: &mut ChaCha8Rng) -> Image {
    let n = FRAME_SIZE;
    let c0: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
    let c1: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let blobs: Vec<([f64; 2], f64, [f64; 3], f64)> = (0..rng.random_range(3..7))
        .map(|_| {
            let center = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let radius = rng.random_range(0.05..0.25);
            let color = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let strength = rng.random_range(0.3..0.8);
            (center, radius, color, strength)
        })
        .collect();
    let mut values = Vec::with_capacity(n * n * 3);
    for r in 0..n {
        for c in 0..n {
            let (u, v) = ((c as f64 + 0.5) / n as f64, (r as f64 + 0.5) / n as f64);
            let t = (((u - 0.5) * dx + (v - 0.5) * dy) / std::f64::consts::SQRT_2 + 0.5).clamp(0.0, 1.0);
            let mut px: [f64; 3] = std::array::from_fn(|i| c0[i] * (1.0 - t) + c1[i] * t);
            for (center, radius, color, strength) in &blobs {
                let d2 = (u - center[0]).powi(2) + (v - center[1]).powi(2);
                let w = strength * (-d2 / (2.0 * radius * radius)).exp();
                for i in 0..3 {
                    px[i] = px[i] * (1.0 - w) + color[i] * w;
                }
            }
            values.extend(px.map(|x| x.clamp(0.0, 1.0)));
        }
    }
    Image { width: n, height: n, values }
}
