//! Particle graphs: velocity history, radius connectivity and training noise.
//!
//! Vertex attribute layout (10 values per particle):
//! `[vx^t, vy^t, vx^(t-1), vy^(t-1), vx^(t-2), vy^(t-2), P0, P1, P2, P3]`.
//! Edge attributes are `(Δx, Δy, |Δ|)` with `Δ = x_sender − x_receiver`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpm::{Trajectory, Vec2, OUTPUT_DT};
use crate::nn::Tensor;

/// Past velocities per particle (C).
pub const HISTORY: usize = 3;
/// Width of the physical encoding P.
pub const ENCODING_DIM: usize = 4;
pub const VERTEX_DIM: usize = 2 * HISTORY + ENCODING_DIM;
pub const EDGE_DIM: usize = 3;
/// Connectivity radius as a fraction of the domain width.
pub const DEFAULT_RADIUS: f64 = 0.12;

/// Newest-first velocity history of one particle.
pub type VelocityHistory = [Vec2; HISTORY];
pub type Encoding = [f64; ENCODING_DIM];

#[derive(Clone, Debug, PartialEq)]
pub struct GraphSample {
    /// N × 10.
    pub vertex_attrs: Tensor,
    /// E × 3.
    pub edge_attrs: Tensor,
    pub senders: Vec<usize>,
    pub receivers: Vec<usize>,
    pub positions: Vec<Vec2>,
    /// N × 2, in raw units.
    pub target_accel: Option<Tensor>,
}

impl GraphSample {
    pub fn num_vertices(&self) -> usize {
        self.positions.len()
    }

    pub fn num_edges(&self) -> usize {
        self.senders.len()
    }

    pub fn encoding(&self, vertex: usize) -> Encoding {
        std::array::from_fn(|k| self.vertex_attrs.get(vertex, 2 * HISTORY + k))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub edge_sigma: f64,
    pub velocity_sigma: f64,
    pub enabled: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            edge_sigma: 0.05,
            velocity_sigma: 0.002,
            enabled: true,
        }
    }
}

impl NoiseConfig {
    pub fn disabled() -> Self {
        NoiseConfig {
            enabled: false,
            ..NoiseConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.edge_sigma >= 0.0 && self.velocity_sigma >= 0.0) {
            return Err(Error::Config("noise sigmas must be non-negative".into()));
        }
        Ok(())
    }
}

fn velocity_at(traj: &Trajectory, t: usize, i: usize) -> Vec2 {
    let (a, b) = (traj.frame(t)[i], traj.frame(t - 1)[i]);
    [(a[0] - b[0]) / OUTPUT_DT, (a[1] - b[1]) / OUTPUT_DT]
}

/// `v^(t−i) = (x^(t−i) − x^(t−i−1)) / dt` for `i = 0..C`, newest first.
pub fn finite_difference_velocities(traj: &Trajectory, t: usize) -> Result<Vec<VelocityHistory>> {
    if t < HISTORY || t >= traj.steps() {
        return Err(Error::Range(format!(
            "velocity history at step {t} needs {HISTORY} <= t < {}",
            traj.steps()
        )));
    }
    Ok((0..traj.num_particles)
        .map(|i| std::array::from_fn(|k| velocity_at(traj, t - k, i)))
        .collect())
}

/// `a^t = (v^(t+1) − v^t) / dt` per particle.
pub fn target_acceleration(traj: &Trajectory, t: usize) -> Result<Vec<Vec2>> {
    if t < 1 || t + 1 >= traj.steps() {
        return Err(Error::Range(format!(
            "acceleration at step {t} needs 1 <= t < {}",
            traj.steps() - 1
        )));
    }
    Ok((0..traj.num_particles)
        .map(|i| {
            let (v0, v1) = (velocity_at(traj, t, i), velocity_at(traj, t + 1, i));
            [(v1[0] - v0[0]) / OUTPUT_DT, (v1[1] - v0[1]) / OUTPUT_DT]
        })
        .collect())
}

/// Directed pairs `(sender, receiver)` closer than `radius`, found with a
/// uniform grid of cell size `radius`. Edges are grouped by receiver and,
/// within a receiver, ordered by the sender's relative offset, so the order
/// does not depend on particle labels.
pub fn radius_edges(positions: &[Vec2], radius: f64) -> Vec<(usize, usize)> {
    let n = positions.len();
    if n < 2 {
        return Vec::new();
    }
    let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
    for p in positions {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let dims: [usize; 2] = std::array::from_fn(|d| ((hi[d] - lo[d]) / radius).floor() as usize + 1);
    let cell_of = |p: &Vec2| -> [usize; 2] {
        std::array::from_fn(|d| (((p[d] - lo[d]) / radius).floor() as usize).min(dims[d] - 1))
    };
    // Counting sort of particles into cells.
    let mut start = vec![0usize; dims[0] * dims[1] + 1];
    let cells: Vec<usize> = positions
        .iter()
        .map(|p| {
            let c = cell_of(p);
            c[1] * dims[0] + c[0]
        })
        .collect();
    for &c in &cells {
        start[c + 1] += 1;
    }
    for k in 1..start.len() {
        start[k] += start[k - 1];
    }
    let mut fill = start.clone();
    let mut members = vec![0usize; n];
    for (i, &c) in cells.iter().enumerate() {
        members[fill[c]] = i;
        fill[c] += 1;
    }

    let r2 = radius * radius;
    let mut edges = Vec::new();
    let mut local: Vec<(Vec2, usize)> = Vec::new();
    for (r, pr) in positions.iter().enumerate() {
        let c = cell_of(pr);
        local.clear();
        for cy in c[1].saturating_sub(1)..=(c[1] + 1).min(dims[1] - 1) {
            for cx in c[0].saturating_sub(1)..=(c[0] + 1).min(dims[0] - 1) {
                let cell = cy * dims[0] + cx;
                for &s in &members[start[cell]..start[cell + 1]] {
                    if s == r {
                        continue;
                    }
                    let d = [positions[s][0] - pr[0], positions[s][1] - pr[1]];
                    if d[0] * d[0] + d[1] * d[1] < r2 {
                        local.push((d, s));
                    }
                }
            }
        }
        local.sort_by(|a, b| a.0[0].total_cmp(&b.0[0]).then(a.0[1].total_cmp(&b.0[1])).then(a.1.cmp(&b.1)));
        edges.extend(local.iter().map(|&(_, s)| (s, r)));
    }
    edges
}

/// Assembles vertex and edge attributes for one state.
pub fn build_graph(positions: &[Vec2], velocities: &[VelocityHistory], encoding: &Encoding, radius: f64) -> Result<GraphSample> {
    if !(radius > 0.0) {
        return Err(Error::Range(format!("connectivity radius {radius} must be positive")));
    }
    if positions.len() != velocities.len() {
        return Err(Error::Contract(format!(
            "{} positions but {} velocity histories",
            positions.len(),
            velocities.len()
        )));
    }
    let n = positions.len();
    let mut vertex = Vec::with_capacity(n * VERTEX_DIM);
    for hist in velocities {
        for v in hist {
            vertex.extend_from_slice(v);
        }
        vertex.extend_from_slice(encoding);
    }
    let edges = radius_edges(positions, radius);
    let mut edge = Vec::with_capacity(edges.len() * EDGE_DIM);
    for &(s, r) in &edges {
        let d = [positions[s][0] - positions[r][0], positions[s][1] - positions[r][1]];
        edge.extend_from_slice(&[d[0], d[1], d[0].hypot(d[1])]);
    }
    Ok(GraphSample {
        vertex_attrs: Tensor::from_vec(n, VERTEX_DIM, vertex)?,
        edge_attrs: Tensor::from_vec(edges.len(), EDGE_DIM, edge)?,
        senders: edges.iter().map(|e| e.0).collect(),
        receivers: edges.iter().map(|e| e.1).collect(),
        positions: positions.to_vec(),
        target_accel: None,
    })
}

/// Gaussian noise on raw edge attributes and on the velocity part of the
/// vertex attributes. Encodings, positions and targets are untouched.
pub fn inject_noise<R: Rng + ?Sized>(g: &GraphSample, cfg: &NoiseConfig, rng: &mut R) -> Result<GraphSample> {
    cfg.validate()?;
    let mut out = g.clone();
    if !cfg.enabled {
        return Ok(out);
    }
    if cfg.edge_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.edge_sigma).expect("valid sigma");
        for v in out.edge_attrs.values_mut() {
            *v += normal.sample(rng);
        }
    }
    if cfg.velocity_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.velocity_sigma).expect("valid sigma");
        let n = out.num_vertices();
        let vals = out.vertex_attrs.values_mut();
        for i in 0..n {
            for v in &mut vals[i * VERTEX_DIM..i * VERTEX_DIM + 2 * HISTORY] {
                *v += normal.sample(rng);
            }
        }
    }
    Ok(out)
}

/// Mean over edges of `|noise| / |attrs|` for the edge attribute rows.
pub fn mean_relative_edge_perturbation(clean: &GraphSample, noisy: &GraphSample) -> f64 {
    let e = clean.num_edges();
    if e == 0 {
        return 0.0;
    }
    let (a, b) = (clean.edge_attrs.values(), noisy.edge_attrs.values());
    let mut total = 0.0;
    for k in 0..e {
        let row = k * EDGE_DIM..(k + 1) * EDGE_DIM;
        let norm: f64 = a[row.clone()].iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: f64 = a[row.clone()].iter().zip(&b[row]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        total += diff / norm;
    }
    total / e as f64
}
