use std::path::Path;

use rand::Rng;

use super::material::{MaterialKind, MaterialSpec};
use super::math::Vec2;
use super::sim::{init_scene, Circle, ParticleSystem, SimConfig, Simulator};
use crate::codec::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"VDTR";
const VERSION: u32 = 1;

/// Recorded positions of one simulated system, sampled every `output_dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub material: MaterialSpec,
    pub num_particles: usize,
    /// Step-major positions, `steps * num_particles` entries.
    pub positions: Vec<Vec2>,
    pub seed: u64,
    /// Present for generated trajectories; not stored on disk.
    pub initial_circle: Option<Circle>,
}

impl Trajectory {
    pub fn new(material: MaterialSpec, num_particles: usize, positions: Vec<Vec2>, seed: u64) -> Result<Self> {
        if num_particles == 0 || positions.len() % num_particles != 0 {
            return Err(Error::Contract(format!(
                "{} positions do not split into frames of {num_particles} particles",
                positions.len()
            )));
        }
        Ok(Trajectory {
            material,
            num_particles,
            positions,
            seed,
            initial_circle: None,
        })
    }

    pub fn steps(&self) -> usize {
        self.positions.len() / self.num_particles
    }

    pub fn frame(&self, t: usize) -> &[Vec2] {
        &self.positions[t * self.num_particles..(t + 1) * self.num_particles]
    }

    pub fn class(&self) -> MaterialKind {
        self.material.kind
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u32(self.material.kind.id());
        w.f64(self.material.friction_angle_deg);
        w.u32(self.num_particles as u32);
        w.u32(self.steps() as u32);
        for p in &self.positions {
            w.f64(p[0]);
            w.f64(p[1]);
        }
        w.finish()
    }

    /// Decodes a trajectory file; the seed is not part of the format and is set to 0.
    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader::new("trajectory", data);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let kind = MaterialKind::from_id(r.u32()?).map_err(|e| r.err(e.to_string()))?;
        let friction_angle_deg = r.f64()?;
        let n = r.u32()? as usize;
        let steps = r.u32()? as usize;
        if n == 0 {
            return Err(r.err("zero particles"));
        }
        let flat = r.f64s(n.checked_mul(steps).and_then(|v| v.checked_mul(2)).ok_or_else(|| r.err("size overflow"))?)?;
        r.finish()?;
        let positions = flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        Trajectory::new(MaterialSpec { kind, friction_angle_deg }, n, positions, 0)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Trajectory::from_bytes(&read_file(path)?)
    }
}

/// Runs `system` forward and records `config.steps` frames, frame 0 being the
/// initial state.
pub fn simulate(config: &SimConfig, material: &MaterialSpec, mut system: ParticleSystem, seed: u64) -> Result<Trajectory> {
    let mut sim = Simulator::new(config, material)?;
    let n = system.len();
    let mut positions = Vec::with_capacity(n * config.steps);
    positions.extend(system.domain_positions());
    let sub = config.substeps_per_output();
    for _ in 1..config.steps {
        for _ in 0..sub {
            sim.substep(&mut system)?;
        }
        positions.extend(system.domain_positions());
    }
    Trajectory::new(*material, n, positions, seed)
}

/// Samples a random circle scene and simulates it.
pub fn generate_trajectory<R: Rng + ?Sized>(config: &SimConfig, material: &MaterialSpec, rng: &mut R) -> Result<Trajectory> {
    config.validate()?;
    let (system, circle) = init_scene(config, material, rng);
    let mut traj = simulate(config, material, system, config.seed)?;
    traj.initial_circle = Some(circle);
    Ok(traj)
}
