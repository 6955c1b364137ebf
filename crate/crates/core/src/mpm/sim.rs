//! Two-dimensional MLS-MPM with quadratic B-spline transfers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::material::{constants, MaterialKind, MaterialSpec};
use super::math::{Mat2, Vec2};
use crate::error::{Error, Result};

/// Output sampling interval of recorded trajectories (seconds).
pub const OUTPUT_DT: f64 = 0.01;
/// Recorded frames per trajectory.
pub const TRAJECTORY_STEPS: usize = 500;
/// Grid cells next to each wall that enforce the boundary condition.
pub const BOUNDARY_CELLS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub grid_resolution: usize,
    pub dt_sim: f64,
    pub output_dt: f64,
    pub gravity: Vec2,
    pub seed: u64,
    /// Frames recorded per trajectory (frame 0 is the initial state).
    pub steps: usize,
    /// Initial circle radius range, in domain units.
    pub radius_range: (f64, f64),
    /// Clearance between the initial circle and the walls.
    pub margin: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            grid_resolution: 64,
            dt_sim: 2e-4,
            output_dt: OUTPUT_DT,
            gravity: [0.0, -9.8],
            seed: 0,
            steps: TRAJECTORY_STEPS,
            radius_range: (0.08, 0.2),
            margin: 0.05,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_resolution < 16 || self.grid_resolution % 2 != 0 {
            return Err(Error::Config(format!(
                "grid_resolution {} must be even and at least 16",
                self.grid_resolution
            )));
        }
        if !(self.dt_sim > 0.0 && self.output_dt > 0.0) {
            return Err(Error::Config("time steps must be positive".into()));
        }
        let ratio = self.output_dt / self.dt_sim;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio || ratio.round() < 1.0 {
            return Err(Error::Config(format!(
                "output_dt {} is not an integer multiple of dt_sim {}",
                self.output_dt, self.dt_sim
            )));
        }
        let (r0, r1) = self.radius_range;
        if !(r0 > 0.0 && r0 <= r1 && r1 + self.margin < 0.5) {
            return Err(Error::Config(format!("invalid radius range {:?}", self.radius_range)));
        }
        Ok(())
    }

    pub fn substeps_per_output(&self) -> usize {
        (self.output_dt / self.dt_sim).round() as usize
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.grid_resolution as f64
    }

    /// Initial particle lattice spacing: half a grid cell.
    pub fn particle_spacing(&self) -> f64 {
        0.5 * self.dx()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: Vec2,
    pub radius: f64,
}

/// Particle state. Positions are stored relative to the domain centre
/// `(0.5, 0.5)` so reflection about `x = 0.5` is exact in floating point.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSystem {
    pub positions: Vec<Vec2>,
    pub velocities: Vec<Vec2>,
    pub deformation_gradients: Vec<Mat2>,
    pub affine_momenta: Vec<Mat2>,
    pub plastic_j: Vec<f64>,
    /// Mass of a single particle.
    pub mass: f64,
    /// Rest volume (area) of a single particle.
    pub volume: f64,
}

impl ParticleSystem {
    /// Builds a resting, undeformed system from unit-square positions.
    pub fn from_positions(domain_positions: &[Vec2], spacing: f64) -> Self {
        let positions: Vec<Vec2> = domain_positions.iter().map(|p| [p[0] - 0.5, p[1] - 0.5]).collect();
        let n = positions.len();
        let volume = spacing * spacing;
        ParticleSystem {
            positions,
            velocities: vec![[0.0; 2]; n],
            deformation_gradients: vec![Mat2::IDENTITY; n],
            affine_momenta: vec![Mat2::ZERO; n],
            plastic_j: vec![1.0; n],
            mass: volume * constants::DENSITY,
            volume,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Reflects the whole state about `x = 0.5`.
    pub fn mirrored(&self) -> Self {
        let flip = Mat2::diag(-1.0, 1.0);
        let conj = |m: &Mat2| flip * *m * flip;
        ParticleSystem {
            positions: self.positions.iter().map(|p| [-p[0], p[1]]).collect(),
            velocities: self.velocities.iter().map(|v| [-v[0], v[1]]).collect(),
            deformation_gradients: self.deformation_gradients.iter().map(conj).collect(),
            affine_momenta: self.affine_momenta.iter().map(conj).collect(),
            plastic_j: self.plastic_j.clone(),
            mass: self.mass,
            volume: self.volume,
        }
    }

    /// Unit-square coordinates of particle `i`.
    pub fn domain_position(&self, i: usize) -> Vec2 {
        let p = self.positions[i];
        [p[0] + 0.5, p[1] + 0.5]
    }

    pub fn domain_positions(&self) -> Vec<Vec2> {
        (0..self.len()).map(|i| self.domain_position(i)).collect()
    }

    pub fn center_of_mass(&self) -> Vec2 {
        let n = self.len().max(1) as f64;
        let s = self
            .positions
            .iter()
            .fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
        [s[0] / n + 0.5, s[1] / n + 0.5]
    }
}

/// Samples the random initial circle.
pub fn sample_circle<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Circle {
    let (r0, r1) = config.radius_range;
    let radius = if r0 == r1 { r0 } else { rng.random_range(r0..=r1) };
    let lo = radius + config.margin;
    let hi = 1.0 - radius - config.margin;
    Circle {
        center: [rng.random_range(lo..=hi), rng.random_range(lo..=hi)],
        radius,
    }
}

/// Fills `circle` with lattice points at half-cell spacing, each jittered by
/// up to ±25% of the spacing. Membership uses the unjittered lattice, so the
/// particle count depends only on the radius.
pub fn fill_circle<R: Rng + ?Sized>(config: &SimConfig, circle: Circle, rng: &mut R) -> ParticleSystem {
    let s = config.particle_spacing();
    let k = (circle.radius / s).floor() as i64;
    let mut positions = Vec::new();
    for j in -k..=k {
        for i in -k..=k {
            let (ox, oy) = (i as f64 * s, j as f64 * s);
            if ox * ox + oy * oy > circle.radius * circle.radius {
                continue;
            }
            let jx = rng.random_range(-0.25..=0.25) * s;
            let jy = rng.random_range(-0.25..=0.25) * s;
            positions.push([circle.center[0] + ox + jx, circle.center[1] + oy + jy]);
        }
    }
    ParticleSystem::from_positions(&positions, s)
}

/// Random circle of particles at rest with undeformed state.
pub fn init_scene<R: Rng + ?Sized>(config: &SimConfig, _material: &MaterialSpec, rng: &mut R) -> (ParticleSystem, Circle) {
    let circle = sample_circle(config, rng);
    (fill_circle(config, circle, rng), circle)
}

/// Reusable grid storage and material parameters for stepping one system.
pub struct Simulator {
    config: SimConfig,
    material: MaterialSpec,
    n: usize,
    grid_mv: Vec<Vec2>,
    grid_m: Vec<f64>,
    mu: f64,
    lambda: f64,
    substep: usize,
}

/// Nearest grid node (offset from the centre node) and the particle's
/// signed distance to it, both in cell units.
#[inline]
fn stencil(u: f64, inv_dx: f64) -> (i64, f64) {
    let g = u * inv_dx;
    let c = (g + 0.5).floor();
    (c as i64, g - c)
}

/// Quadratic B-spline weights for node offsets -1, 0, +1. Swapping the
/// sign of `d` swaps the outer weights exactly.
#[inline]
fn weights(d: f64) -> [f64; 3] {
    [0.5 * (0.5 - d) * (0.5 - d), 0.75 - d * d, 0.5 * (0.5 + d) * (0.5 + d)]
}

impl Simulator {
    pub fn new(config: &SimConfig, material: &MaterialSpec) -> Result<Self> {
        config.validate()?;
        let n = config.grid_resolution;
        let (mu, lambda) = constants::lame();
        Ok(Simulator {
            config: config.clone(),
            material: *material,
            n,
            grid_mv: vec![[0.0; 2]; (n + 1) * (n + 1)],
            grid_m: vec![0.0; (n + 1) * (n + 1)],
            mu,
            lambda,
            substep: 0,
        })
    }

    pub fn substeps_taken(&self) -> usize {
        self.substep
    }

    fn stress(&self, f: &Mat2, jp: f64) -> Mat2 {
        let j = f.det();
        match self.material.kind {
            MaterialKind::Water => Mat2::IDENTITY.scale(self.lambda * j * (j - 1.0)),
            MaterialKind::Elastic | MaterialKind::Snow => {
                let h = if self.material.kind == MaterialKind::Snow {
                    (constants::SNOW_HARDENING * (1.0 - jp)).exp()
                } else {
                    1.0
                };
                let (mu, la) = (self.mu * h, self.lambda * h);
                let (r, _) = f.polar();
                (*f - r).scale(2.0 * mu) * f.transpose() + Mat2::IDENTITY.scale(la * j * (j - 1.0))
            }
            MaterialKind::Sand => {
                let (u, sig, _) = f.svd();
                let e = [sig[0].max(1e-6).ln(), sig[1].max(1e-6).ln()];
                let tr = e[0] + e[1];
                let d = Mat2::diag(2.0 * self.mu * e[0] + self.lambda * tr, 2.0 * self.mu * e[1] + self.lambda * tr);
                u * d * u.transpose()
            }
        }
    }

    fn plasticity(&self, f: Mat2, jp: &mut f64) -> Mat2 {
        match self.material.kind {
            MaterialKind::Elastic => f,
            MaterialKind::Water => {
                let j = f.det();
                Mat2::IDENTITY.scale(j.max(0.0).sqrt())
            }
            MaterialKind::Snow => {
                let (u, sig, v) = f.svd();
                let lo = 1.0 - constants::SNOW_CRITICAL_COMPRESSION;
                let hi = 1.0 + constants::SNOW_CRITICAL_STRETCH;
                let c = [sig[0].clamp(lo, hi), sig[1].clamp(lo, hi)];
                *jp = (*jp * (sig[0] * sig[1]) / (c[0] * c[1])).clamp(constants::SNOW_JP_MIN, constants::SNOW_JP_MAX);
                u * Mat2::diag(c[0], c[1]) * v.transpose()
            }
            MaterialKind::Sand => {
                let (u, sig, v) = f.svd();
                let e = [sig[0].max(1e-6).ln(), sig[1].max(1e-6).ln()];
                let tr = e[0] + e[1];
                let dev = [e[0] - 0.5 * tr, e[1] - 0.5 * tr];
                let dev_norm = (dev[0] * dev[0] + dev[1] * dev[1]).sqrt();
                let alpha = self.material.drucker_prager_alpha();
                let projected = if dev_norm <= 0.0 || tr > 0.0 {
                    [0.0, 0.0]
                } else {
                    let gamma = dev_norm + (2.0 * self.lambda + 2.0 * self.mu) / (2.0 * self.mu) * tr * alpha;
                    if gamma <= 0.0 {
                        e
                    } else {
                        [e[0] - gamma * dev[0] / dev_norm, e[1] - gamma * dev[1] / dev_norm]
                    }
                };
                u * Mat2::diag(projected[0].exp(), projected[1].exp()) * v.transpose()
            }
        }
    }

    /// One particle→grid→particle cycle.
    pub fn substep(&mut self, sys: &mut ParticleSystem) -> Result<()> {
        let n = self.n;
        let stride = n + 1;
        let half = (n / 2) as i64;
        let dx = 1.0 / n as f64;
        let inv_dx = n as f64;
        let dt = self.config.dt_sim;
        self.grid_mv.iter_mut().for_each(|v| *v = [0.0; 2]);
        self.grid_m.iter_mut().for_each(|m| *m = 0.0);
        let node = |cx: i64, cy: i64, i: usize, j: usize| ((cy + half + j as i64 - 1) as usize) * stride + (cx + half + i as i64 - 1) as usize;

        for p in 0..sys.len() {
            let x = sys.positions[p];
            let (cx, dxp) = stencil(x[0], inv_dx);
            let (cy, dyp) = stencil(x[1], inv_dx);
            let (wx, wy) = (weights(dxp), weights(dyp));
            let stress = self
                .stress(&sys.deformation_gradients[p], sys.plastic_j[p])
                .scale(-dt * sys.volume * 4.0 * inv_dx * inv_dx);
            let affine = stress + sys.affine_momenta[p].scale(sys.mass);
            let mv = [sys.mass * sys.velocities[p][0], sys.mass * sys.velocities[p][1]];
            for j in 0..3 {
                for i in 0..3 {
                    let dpos = [(i as f64 - 1.0 - dxp) * dx, (j as f64 - 1.0 - dyp) * dx];
                    let w = wx[i] * wy[j];
                    let a = affine.mul_vec(dpos);
                    let idx = node(cx, cy, i, j);
                    let g = &mut self.grid_mv[idx];
                    g[0] += w * (mv[0] + a[0]);
                    g[1] += w * (mv[1] + a[1]);
                    self.grid_m[idx] += w * sys.mass;
                }
            }
        }

        let gravity = self.config.gravity;
        let b = BOUNDARY_CELLS;
        for j in 0..stride {
            for i in 0..stride {
                let idx = j * stride + i;
                let m = self.grid_m[idx];
                if m <= 0.0 {
                    continue;
                }
                let g = &mut self.grid_mv[idx];
                let mut v = [g[0] / m + dt * gravity[0], g[1] / m + dt * gravity[1]];
                let into_wall = (i < b && v[0] < 0.0)
                    || (i > n - b && v[0] > 0.0)
                    || (j < b && v[1] < 0.0)
                    || (j > n - b && v[1] > 0.0);
                if into_wall {
                    v = [0.0, 0.0];
                }
                *g = v;
            }
        }

        let bound = 0.5 - dx;
        for p in 0..sys.len() {
            let x = sys.positions[p];
            let (cx, dxp) = stencil(x[0], inv_dx);
            let (cy, dyp) = stencil(x[1], inv_dx);
            let (wx, wy) = (weights(dxp), weights(dyp));
            let mut v = [0.0; 2];
            let mut c = Mat2::ZERO;
            for j in 0..3 {
                // Outer columns are summed first so mirrored particles see the
                // same rounding.
                let term = |i: usize| {
                    let gv = self.grid_mv[node(cx, cy, i, j)];
                    let w = wx[i] * wy[j];
                    let dpos = [i as f64 - 1.0 - dxp, j as f64 - 1.0 - dyp];
                    ([w * gv[0], w * gv[1]], Mat2::outer(gv, dpos).scale(4.0 * inv_dx * w))
                };
                let (v0, c0) = term(0);
                let (v1, c1) = term(1);
                let (v2, c2) = term(2);
                v[0] += (v0[0] + v2[0]) + v1[0];
                v[1] += (v0[1] + v2[1]) + v1[1];
                c = c + ((c0 + c2) + c1);
            }
            let xn = [
                (x[0] + dt * v[0]).clamp(-bound, bound),
                (x[1] + dt * v[1]).clamp(-bound, bound),
            ];
            let f = (Mat2::IDENTITY + c.scale(dt)) * sys.deformation_gradients[p];
            let f = self.plasticity(f, &mut sys.plastic_j[p]);
            if !(xn[0].is_finite() && xn[1].is_finite() && v[0].is_finite() && v[1].is_finite() && f.is_finite()) {
                return Err(Error::SimulationDiverged { step: self.substep });
            }
            sys.positions[p] = xn;
            sys.velocities[p] = v;
            sys.affine_momenta[p] = c;
            sys.deformation_gradients[p] = f;
        }
        self.substep += 1;
        Ok(())
    }
}
