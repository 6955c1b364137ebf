//! Trajectory datasets on disk and their JSON manifest.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpm::{generate_trajectory, MaterialKind, MaterialSpec, SimConfig, Trajectory};
use crate::render::{render_video, BackgroundSet};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
/// First recorded step used for training and evaluation (one simulated second).
pub const USABLE_START: usize = 100;
/// Trajectories per class in the main datasets.
pub const TRAJECTORIES_PER_CLASS: usize = 30;
pub const SWEEP_ANGLES: usize = 15;
pub const SWEEP_TRAJECTORIES_PER_ANGLE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Trajectory file, relative to the manifest directory.
    pub path: PathBuf,
    pub class: MaterialKind,
    pub friction_deg: f64,
    pub seed: u64,
    pub usable_range: [usize; 2],
    /// Rendered clip of this trajectory, relative to the manifest directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<PathBuf>,
}

impl ManifestEntry {
    pub fn material(&self) -> MaterialSpec {
        MaterialSpec {
            kind: self.class,
            friction_angle_deg: self.friction_deg,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub entries: Vec<ManifestEntry>,
    /// Directory the relative entry paths resolve against.
    #[serde(skip)]
    pub root: PathBuf,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Manifest {
            version: MANIFEST_VERSION,
            entries: Vec::new(),
            root: root.into(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut m: Manifest = serde_json::from_str(text).map_err(|e| Error::Parse {
            what: "manifest".into(),
            offset: 0,
            msg: e.to_string(),
        })?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Parse {
                what: "manifest".into(),
                offset: 0,
                msg: format!("unsupported version {} (expected {MANIFEST_VERSION})", m.version),
            });
        }
        m.root = root.into();
        Ok(m)
    }

    /// Writes `manifest.json` into `root`.
    pub fn save(&self) -> Result<PathBuf> {
        let path = self.root.join(MANIFEST_FILE);
        crate::codec::write_file(&path, self.to_json().as_bytes())?;
        Ok(path)
    }

    /// Loads a manifest file, or `manifest.json` inside a directory.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Manifest::from_json(&text, root)
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn load_trajectory(&self, index: usize) -> Result<Trajectory> {
        let e = &self.entries[index];
        let mut t = Trajectory::load(&self.resolve(&e.path))?;
        t.seed = e.seed;
        Ok(t)
    }

    pub fn classes(&self) -> Vec<MaterialKind> {
        let mut c: Vec<_> = self.entries.iter().map(|e| e.class).collect();
        c.sort();
        c.dedup();
        c
    }

    /// Entry indices grouped by class, in class-id order.
    pub fn by_class(&self) -> Vec<(MaterialKind, Vec<usize>)> {
        self.classes()
            .into_iter()
            .map(|k| (k, (0..self.entries.len()).filter(|&i| self.entries[i].class == k).collect()))
            .collect()
    }
}

/// Seed of the `index`-th trajectory of `class` in a dataset seeded with `base`.
pub fn trajectory_seed(base: u64, class: MaterialKind, index: usize) -> u64 {
    base.wrapping_add(((class.id() as u64) << 32) | index as u64)
}

fn write_entries(
    config: &SimConfig,
    out_dir: &Path,
    jobs: &[(MaterialSpec, u64, String)],
    manifest: &mut Manifest,
) -> Result<()> {
    for (material, seed, stem) in jobs {
        let cfg = SimConfig { seed: *seed, ..config.clone() };
        let mut rng = ChaCha8Rng::seed_from_u64(*seed);
        let traj = generate_trajectory(&cfg, material, &mut rng)?;
        let rel = PathBuf::from("trajectories").join(format!("{stem}.vdtr"));
        traj.save(&out_dir.join(&rel))?;
        manifest.entries.push(ManifestEntry {
            path: rel,
            class: material.kind,
            friction_deg: material.friction_angle_deg,
            seed: *seed,
            usable_range: [USABLE_START, config.steps],
            clip: None,
        });
    }
    Ok(())
}

/// Simulates `per_class` trajectories for each class into `out_dir` and
/// writes the manifest.
pub fn generate_dataset(config: &SimConfig, out_dir: &Path, per_class: usize, classes: &[MaterialKind]) -> Result<Manifest> {
    config.validate()?;
    if config.steps <= USABLE_START {
        return Err(Error::Config(format!("steps {} leave no usable range", config.steps)));
    }
    let jobs: Vec<_> = classes
        .iter()
        .flat_map(|&k| {
            (0..per_class).map(move |i| (MaterialSpec::new(k), trajectory_seed(config.seed, k, i), format!("{k}_{i:03}")))
        })
        .collect();
    let mut manifest = Manifest::new(out_dir);
    write_entries(config, out_dir, &jobs, &mut manifest)?;
    manifest.save()?;
    Ok(manifest)
}

/// Evenly spaced sand friction angles from 0 to 45 degrees inclusive.
pub fn sweep_angles() -> Vec<f64> {
    (0..SWEEP_ANGLES).map(|k| 45.0 * k as f64 / (SWEEP_ANGLES - 1) as f64).collect()
}

/// Sand trajectories over the friction-angle sweep.
pub fn friction_sweep_dataset(config: &SimConfig, out_dir: &Path) -> Result<Manifest> {
    config.validate()?;
    let mut jobs = Vec::new();
    for (a, angle) in sweep_angles().into_iter().enumerate() {
        for i in 0..SWEEP_TRAJECTORIES_PER_ANGLE {
            let seed = trajectory_seed(config.seed, MaterialKind::Sand, a * SWEEP_TRAJECTORIES_PER_ANGLE + i);
            jobs.push((MaterialSpec::sand(angle)?, seed, format!("sand_phi{a:02}_{i:02}")));
        }
    }
    let mut manifest = Manifest::new(out_dir);
    write_entries(config, out_dir, &jobs, &mut manifest)?;
    manifest.save()?;
    Ok(manifest)
}

/// Salt mixed into a trajectory seed to derive its render-style stream.
const RENDER_SALT: u64 = 0x5649_4445_4f53_5459;

/// Renders one clip per manifest entry into `clips/`, records the clip paths
/// and rewrites the manifest. Styles are seeded per entry, so the result does
/// not depend on entry order.
pub fn render_clips(manifest: &mut Manifest, backgrounds: &BackgroundSet) -> Result<()> {
    for index in 0..manifest.entries.len() {
        let traj = manifest.load_trajectory(index)?;
        let entry = &manifest.entries[index];
        let mut rng = ChaCha8Rng::seed_from_u64(entry.seed ^ RENDER_SALT);
        let clip = render_video(&traj, index as u32, &mut rng, backgrounds)?;
        let stem = entry.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| index.to_string());
        let rel = PathBuf::from("clips").join(format!("{stem}.vdvc"));
        clip.save(&manifest.resolve(&rel))?;
        manifest.entries[index].clip = Some(rel);
    }
    manifest.save()?;
    Ok(())
}
