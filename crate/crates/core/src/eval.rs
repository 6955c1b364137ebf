//! Evaluation: one-step error, Wasserstein rollout curves, encoding
//! statistics, PCA with KDE contours, interpolation linearity and the
//! friction sweep.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gns::{predict_accelerations, rollout_with};
use crate::graph::{build_graph, finite_difference_velocities, target_acceleration, Encoding, VelocityHistory, DEFAULT_RADIUS, ENCODING_DIM, HISTORY};
use crate::mpm::{MaterialKind, Trajectory, Vec2};
use crate::render::{sample_window_start, Frame, VideoClip};
use crate::train::{step_range, ClassData, Models, TrainingData};
use crate::video::encoding_variance;

/// First state of every evaluation rollout.
pub const ROLLOUT_START: usize = crate::dataset::USABLE_START + HISTORY;
pub const DEFAULT_ROLLOUT_STEPS: usize = 400;
pub const INTERPOLATION_POINTS: usize = 10;
pub const KDE_GRID: usize = 128;
pub const KDE_PERCENTILE: f64 = 0.85;

/// Anything that maps a state and an encoding to raw-unit accelerations,
/// and frames (or a class, for the baseline) to an encoding.
pub trait Model {
    fn predict(&self, positions: &[Vec2], history: &[VelocityHistory], encoding: &Encoding) -> Result<Vec<Vec2>>;
    fn encode(&self, frames: &[Frame], class: MaterialKind) -> Result<Encoding>;
}

impl Model for Models {
    fn predict(&self, positions: &[Vec2], history: &[VelocityHistory], encoding: &Encoding) -> Result<Vec<Vec2>> {
        let g = build_graph(positions, history, encoding, DEFAULT_RADIUS)?;
        predict_accelerations(&self.gns, &self.stats, &g)
    }

    fn encode(&self, frames: &[Frame], class: MaterialKind) -> Result<Encoding> {
        self.encoding(frames, class)
    }
}

/// Encoding for an evaluation trajectory: a uniformly chosen clip of the
/// same class and a uniform window of `window_n` frames.
pub fn sample_encoding<M: Model + ?Sized, R: Rng + ?Sized>(model: &M, class: &ClassData, window_n: usize, rng: &mut R) -> Result<Encoding> {
    if class.clips.is_empty() {
        return model.encode(&[], class.kind);
    }
    let clip = &class.clips[rng.random_range(0..class.clips.len())];
    let start = sample_window_start(clip.frames.len(), window_n, rng)?;
    model.encode(&clip.frames[start..start + window_n], class.kind)
}

/// Encodes one uniform window of every clip, grouped by class.
pub fn clip_encodings<M: Model + ?Sized, R: Rng + ?Sized>(
    model: &M,
    data: &TrainingData,
    window_n: usize,
    rng: &mut R,
) -> Result<Vec<(MaterialKind, Vec<Encoding>)>> {
    data.classes
        .iter()
        .map(|c| {
            let encs = c
                .clips
                .iter()
                .map(|clip| {
                    let start = sample_window_start(clip.frames.len(), window_n, rng)?;
                    model.encode(&clip.frames[start..start + window_n], c.kind)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((c.kind, encs))
        })
        .collect()
}

fn squared_errors(pred: &[Vec2], truth: &[Vec2], out: &mut Vec<f64>) {
    for (p, t) in pred.iter().zip(truth) {
        out.push((p[0] - t[0]).powi(2));
        out.push((p[1] - t[1]).powi(2));
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MseRow {
    pub label: String,
    pub mse: f64,
    /// Standard deviation of the individual squared errors.
    pub std: f64,
    /// Number of squared errors (states × particles × 2).
    pub count: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct OneStepOptions {
    pub window_n: usize,
    /// Evaluate every `step_stride`-th usable step.
    pub step_stride: usize,
}

impl Default for OneStepOptions {
    fn default() -> Self {
        OneStepOptions {
            window_n: 20,
            step_stride: 1,
        }
    }
}

fn trajectory_errors<M: Model + ?Sized>(model: &M, traj: &Trajectory, enc: &Encoding, stride: usize, out: &mut Vec<f64>) -> Result<()> {
    for t in step_range(traj).step_by(stride.max(1)) {
        let hist = finite_difference_velocities(traj, t)?;
        let pred = model.predict(traj.frame(t), &hist, enc)?;
        squared_errors(&pred, &target_acceleration(traj, t)?, out);
    }
    Ok(())
}

/// Raw-unit acceleration MSE per class over the usable steps of every
/// evaluation trajectory; one encoding is sampled per trajectory.
pub fn one_step_mse<M: Model + ?Sized, R: Rng + ?Sized>(
    model: &M,
    data: &TrainingData,
    opts: OneStepOptions,
    rng: &mut R,
) -> Result<Vec<MseRow>> {
    let mut rows = Vec::new();
    for c in &data.classes {
        if c.trajectories.is_empty() {
            return Err(Error::Dataset(format!("no evaluation trajectories for {}", c.kind)));
        }
        let mut errs = Vec::new();
        for (_, traj) in &c.trajectories {
            let enc = sample_encoding(model, c, opts.window_n, rng)?;
            trajectory_errors(model, traj, &enc, opts.step_stride, &mut errs)?;
        }
        let (mse, std) = mean_std(&errs);
        rows.push(MseRow {
            label: c.kind.to_string(),
            mse,
            std,
            count: errs.len(),
        });
    }
    Ok(rows)
}

/// Pooled MSE over all rows, weighted by sample count.
pub fn pooled_mse(rows: &[MseRow]) -> f64 {
    let n: usize = rows.iter().map(|r| r.count).sum();
    rows.iter().map(|r| r.mse * r.count as f64).sum::<f64>() / n as f64
}

/// Minimum-cost perfect matching of a square cost matrix (row-major),
/// by shortest augmenting paths with dual potentials. Returns the column
/// assigned to each row.
pub fn linear_assignment(cost: &[f64], n: usize) -> Result<Vec<usize>> {
    if cost.len() != n * n {
        return Err(Error::Contract(format!("cost matrix of {} entries is not {n}x{n}", cost.len())));
    }
    if let Some(c) = cost.iter().find(|c| !c.is_finite()) {
        return Err(Error::NonFinite(format!("assignment cost {c}")));
    }
    // 1-based arrays; index 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    Ok(assignment)
}

/// Exact 1-Wasserstein distance between equal-size point sets with
/// Euclidean ground cost: mean matched distance of an optimal assignment.
pub fn wasserstein_distance(a: &[Vec2], b: &[Vec2]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!("point sets differ in size: {} vs {}", a.len(), b.len())));
    }
    let n = a.len();
    if n == 0 {
        return Ok(0.0);
    }
    let cost: Vec<f64> = a
        .iter()
        .flat_map(|p| b.iter().map(move |q| (p[0] - q[0]).hypot(p[1] - q[1])))
        .collect();
    let assign = linear_assignment(&cost, n)?;
    // Sorted summation makes the value independent of argument order.
    let mut matched: Vec<f64> = assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).collect();
    matched.sort_by(f64::total_cmp);
    Ok(matched.iter().sum::<f64>() / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryCurve {
    pub trajectory_id: usize,
    pub class: MaterialKind,
    /// Distance per rollout step, step 0 first; empty when diverged.
    pub distances: Vec<f64>,
    pub diverged_at: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutReport {
    pub start_step: usize,
    pub steps: usize,
    pub trajectories: Vec<TrajectoryCurve>,
    /// Mean over non-diverged trajectories, per class.
    pub mean_curves: BTreeMap<MaterialKind, Vec<f64>>,
    pub diverged: BTreeMap<MaterialKind, usize>,
}

/// Rolls every evaluation trajectory out from `ROLLOUT_START` for
/// `steps` steps (capped by the recorded frames) and measures the
/// Wasserstein distance to ground truth at each step.
pub fn rollout_error_curves<M: Model + ?Sized, R: Rng + ?Sized>(
    model: &M,
    data: &TrainingData,
    steps: usize,
    window_n: usize,
    rng: &mut R,
) -> Result<RolloutReport> {
    let mut trajectories = Vec::new();
    let mut mean_curves = BTreeMap::new();
    let mut diverged = BTreeMap::new();
    let mut horizon = steps;
    for c in &data.classes {
        for (_, t) in &c.trajectories {
            horizon = horizon.min(t.steps().saturating_sub(ROLLOUT_START + 1));
        }
    }
    for c in &data.classes {
        let mut sum = vec![0.0; horizon + 1];
        let (mut ok, mut bad) = (0usize, 0usize);
        for (id, traj) in &c.trajectories {
            let enc = sample_encoding(model, c, window_n, rng)?;
            let hist = finite_difference_velocities(traj, ROLLOUT_START)?;
            let frames = rollout_with(traj.frame(ROLLOUT_START), &hist, horizon, |_, x, h| model.predict(x, h, &enc));
            let curve = match frames {
                Ok(frames) => {
                    let d = frames
                        .iter()
                        .enumerate()
                        .map(|(k, f)| wasserstein_distance(f, traj.frame(ROLLOUT_START + k)))
                        .collect::<Result<Vec<_>>>()?;
                    sum.iter_mut().zip(&d).for_each(|(s, x)| *s += x);
                    ok += 1;
                    TrajectoryCurve {
                        trajectory_id: *id,
                        class: c.kind,
                        distances: d,
                        diverged_at: None,
                    }
                }
                Err(Error::RolloutDiverged { step }) => {
                    bad += 1;
                    TrajectoryCurve {
                        trajectory_id: *id,
                        class: c.kind,
                        distances: Vec::new(),
                        diverged_at: Some(step),
                    }
                }
                Err(e) => return Err(e),
            };
            trajectories.push(curve);
        }
        if ok > 0 {
            sum.iter_mut().for_each(|s| *s /= ok as f64);
            mean_curves.insert(c.kind, sum);
        }
        diverged.insert(c.kind, bad);
    }
    Ok(RolloutReport {
        start_step: ROLLOUT_START,
        steps: horizon,
        trajectories,
        mean_curves,
        diverged,
    })
}

/// Per-class encoding statistics and pairwise separation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub means: BTreeMap<MaterialKind, Encoding>,
    pub variances: BTreeMap<MaterialKind, f64>,
    pub pairs: Vec<PairSeparation>,
    pub separated_pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSeparation {
    pub a: MaterialKind,
    pub b: MaterialKind,
    pub mean_distance: f64,
    /// Mean of the two classes' standard deviations (square root of the
    /// encoding variance).
    pub mean_intra_std: f64,
    pub separated: bool,
}

pub fn mean_encoding(encs: &[Encoding]) -> Result<Encoding> {
    if encs.is_empty() {
        return Err(Error::Contract("mean of no encodings".into()));
    }
    Ok(std::array::from_fn(|d| encs.iter().map(|e| e[d]).sum::<f64>() / encs.len() as f64))
}

pub fn class_separation(by_class: &[(MaterialKind, Vec<Encoding>)]) -> Result<SeparationReport> {
    let mut means = BTreeMap::new();
    let mut variances = BTreeMap::new();
    for (k, encs) in by_class {
        means.insert(*k, mean_encoding(encs)?);
        variances.insert(*k, encoding_variance(encs)?);
    }
    let mut pairs = Vec::new();
    for (i, (a, _)) in by_class.iter().enumerate() {
        for (b, _) in &by_class[i + 1..] {
            let (ma, mb) = (means[a], means[b]);
            let mean_distance = (0..ENCODING_DIM).map(|d| (ma[d] - mb[d]).powi(2)).sum::<f64>().sqrt();
            let mean_intra_std = 0.5 * (variances[a].sqrt() + variances[b].sqrt());
            pairs.push(PairSeparation {
                a: *a,
                b: *b,
                mean_distance,
                mean_intra_std,
                separated: mean_distance > mean_intra_std,
            });
        }
    }
    let separated_pairs = pairs.iter().filter(|p| p.separated).count();
    Ok(SeparationReport {
        means,
        variances,
        pairs,
        separated_pairs,
    })
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues (descending) and matching unit eigenvectors as columns.
pub fn symmetric_eigen(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.len() != n * n {
        return Err(Error::Contract(format!("{} entries is not {n}x{n}", a.len())));
    }
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i * n + j].powi(2)).sum();
        let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (col, &i) in order.iter().enumerate() {
        for k in 0..n {
            vectors[k * n + col] = v[k * n + i];
        }
    }
    Ok((values, vectors))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    pub mean: Encoding,
    /// `axes[d][k]`: component `d` of principal axis `k`.
    pub axes: [[f64; 2]; ENCODING_DIM],
    pub explained_variance: [f64; 2],
    pub projected: Vec<(MaterialKind, Vec<[f64; 2]>)>,
}

impl PcaResult {
    pub fn axis(&self, k: usize) -> Encoding {
        std::array::from_fn(|d| self.axes[d][k])
    }

    pub fn project(&self, e: &Encoding) -> [f64; 2] {
        std::array::from_fn(|k| (0..ENCODING_DIM).map(|d| (e[d] - self.mean[d]) * self.axes[d][k]).sum())
    }

    pub fn reconstruct(&self, p: [f64; 2]) -> Encoding {
        std::array::from_fn(|d| self.mean[d] + p[0] * self.axes[d][0] + p[1] * self.axes[d][1])
    }
}

/// Two-component PCA of the pooled encodings (unbiased covariance). Each
/// axis is signed so its largest-magnitude component is positive.
pub fn pca_2d(by_class: &[(MaterialKind, Vec<Encoding>)]) -> Result<PcaResult> {
    let all: Vec<&Encoding> = by_class.iter().flat_map(|(_, e)| e).collect();
    if all.len() < 2 {
        return Err(Error::Contract(format!("PCA needs at least 2 encodings, got {}", all.len())));
    }
    let n = all.len() as f64;
    let mean: Encoding = std::array::from_fn(|d| all.iter().map(|e| e[d]).sum::<f64>() / n);
    let mut cov = vec![0.0; ENCODING_DIM * ENCODING_DIM];
    for e in &all {
        for i in 0..ENCODING_DIM {
            for j in 0..ENCODING_DIM {
                cov[i * ENCODING_DIM + j] += (e[i] - mean[i]) * (e[j] - mean[j]) / (n - 1.0);
            }
        }
    }
    let (values, vectors) = symmetric_eigen(&cov, ENCODING_DIM)?;
    let mut axes = [[0.0; 2]; ENCODING_DIM];
    for k in 0..2 {
        let col: Vec<f64> = (0..ENCODING_DIM).map(|d| vectors[d * ENCODING_DIM + k]).collect();
        let big = col.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
        let sign = if big < 0.0 { -1.0 } else { 1.0 };
        for d in 0..ENCODING_DIM {
            axes[d][k] = sign * col[d];
        }
    }
    let mut out = PcaResult {
        mean,
        axes,
        explained_variance: [values[0].max(0.0), values[1].max(0.0)],
        projected: Vec::new(),
    };
    out.projected = by_class.iter().map(|(k, encs)| (*k, encs.iter().map(|e| out.project(e)).collect())).collect();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeContour {
    pub degenerate: bool,
    pub bandwidth: [f64; 2],
    /// `[x_min, x_max, y_min, y_max]` of the evaluation grid.
    pub bounds: [f64; 4],
    pub threshold: f64,
    /// Share of points whose cell density is at least `threshold`.
    pub coverage: f64,
    pub polylines: Vec<Vec<[f64; 2]>>,
}

struct DensityGrid {
    n: usize,
    bounds: [f64; 4],
    values: Vec<f64>,
}

impl DensityGrid {
    fn node(&self, i: usize, j: usize) -> [f64; 2] {
        let s = (self.n - 1) as f64;
        [
            self.bounds[0] + (self.bounds[1] - self.bounds[0]) * i as f64 / s,
            self.bounds[2] + (self.bounds[3] - self.bounds[2]) * j as f64 / s,
        ]
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.n + i]
    }

    fn nearest(&self, p: [f64; 2]) -> (usize, usize) {
        let s = (self.n - 1) as f64;
        let fi = ((p[0] - self.bounds[0]) / (self.bounds[1] - self.bounds[0]) * s).round();
        let fj = ((p[1] - self.bounds[2]) / (self.bounds[3] - self.bounds[2]) * s).round();
        (fi.clamp(0.0, s) as usize, fj.clamp(0.0, s) as usize)
    }
}

/// Gaussian KDE (Scott's rule, per-axis bandwidth) on a `grid × grid`
/// lattice spanning the points plus a 10% margin, contoured at the density
/// level that keeps `percentile` of the points in cells at or above it.
pub fn kde_contour(points: &[[f64; 2]], percentile: f64, grid: usize) -> Result<KdeContour> {
    if points.len() < 2 {
        return Err(Error::Contract(format!("KDE needs at least 2 points, got {}", points.len())));
    }
    if !(0.0..=1.0).contains(&percentile) || grid < 2 {
        return Err(Error::Range(format!("percentile {percentile} / grid {grid}")));
    }
    let n = points.len() as f64;
    let mut sd = [0.0; 2];
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for d in 0..2 {
        let m = points.iter().map(|p| p[d]).sum::<f64>() / n;
        sd[d] = (points.iter().map(|p| (p[d] - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        for p in points {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    if lo == hi {
        return Ok(KdeContour {
            degenerate: true,
            bandwidth: [0.0; 2],
            bounds: [lo[0], hi[0], lo[1], hi[1]],
            threshold: 0.0,
            coverage: 1.0,
            polylines: Vec::new(),
        });
    }
    let factor = n.powf(-1.0 / 6.0);
    let mut h = [sd[0] * factor, sd[1] * factor];
    // A flat axis borrows the other axis' bandwidth.
    for d in 0..2 {
        if h[d] == 0.0 {
            h[d] = h[1 - d];
        }
    }
    let mut bounds = [0.0; 4];
    for d in 0..2 {
        let margin = if hi[d] > lo[d] { 0.1 * (hi[d] - lo[d]) } else { 3.0 * h[d] };
        bounds[2 * d] = lo[d] - margin;
        bounds[2 * d + 1] = hi[d] + margin;
    }
    let mut g = DensityGrid {
        n: grid,
        bounds,
        values: vec![0.0; grid * grid],
    };
    let norm = 1.0 / (n * 2.0 * std::f64::consts::PI * h[0] * h[1]);
    for j in 0..grid {
        for i in 0..grid {
            let x = g.node(i, j);
            let s: f64 = points
                .iter()
                .map(|p| (-0.5 * (((x[0] - p[0]) / h[0]).powi(2) + ((x[1] - p[1]) / h[1]).powi(2))).exp())
                .sum();
            g.values[j * grid + i] = s * norm;
        }
    }
    let mut at_points: Vec<f64> = points
        .iter()
        .map(|p| {
            let (i, j) = g.nearest(*p);
            g.at(i, j)
        })
        .collect();
    at_points.sort_by(|a, b| b.total_cmp(a));
    let keep = ((percentile * n).ceil() as usize).clamp(1, points.len());
    let threshold = at_points[keep - 1];
    let coverage = at_points.iter().filter(|&&d| d >= threshold).count() as f64 / n;
    Ok(KdeContour {
        degenerate: false,
        bandwidth: h,
        bounds,
        threshold,
        coverage,
        polylines: marching_squares(&g, threshold),
    })
}

/// Edge identifier of a crossing point: `(i, j, vertical)` names the grid
/// edge leaving node `(i, j)` along x (`false`) or y (`true`).
type EdgeKey = (usize, usize, bool);

fn marching_squares(g: &DensityGrid, level: f64) -> Vec<Vec<[f64; 2]>> {
    let n = g.n;
    let point = |k: EdgeKey| -> [f64; 2] {
        let (i, j, vertical) = k;
        let (i2, j2) = if vertical { (i, j + 1) } else { (i + 1, j) };
        let (a, b) = (g.at(i, j), g.at(i2, j2));
        let t = if a == b { 0.5 } else { ((level - a) / (b - a)).clamp(0.0, 1.0) };
        let (p, q) = (g.node(i, j), g.node(i2, j2));
        [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
    };
    let mut segments: Vec<(EdgeKey, EdgeKey)> = Vec::new();
    for j in 0..n - 1 {
        for i in 0..n - 1 {
            let v = [g.at(i, j), g.at(i + 1, j), g.at(i + 1, j + 1), g.at(i, j + 1)];
            let inside = v.map(|x| x >= level);
            let case = inside.iter().enumerate().fold(0, |acc, (k, &b)| acc | ((b as u8) << k));
            // Cell edges: bottom, right, top, left.
            let bottom = (i, j, false);
            let right = (i + 1, j, true);
            let top = (i, j + 1, false);
            let left = (i, j, true);
            let mut add = |a, b| segments.push((a, b));
            match case {
                0 | 15 => {}
                1 | 14 => add(left, bottom),
                2 | 13 => add(bottom, right),
                3 | 12 => add(left, right),
                4 | 11 => add(right, top),
                6 | 9 => add(bottom, top),
                7 | 8 => add(left, top),
                5 | 10 => {
                    let centre_inside = v.iter().sum::<f64>() / 4.0 >= level;
                    // Corners 0 and 2 inside (case 5) or 1 and 3 (case 10).
                    if (case == 5) == centre_inside {
                        add(left, top);
                        add(bottom, right);
                    } else {
                        add(left, bottom);
                        add(right, top);
                    }
                }
                _ => unreachable!(),
            }
        }
    }
    let mut adj: HashMap<EdgeKey, Vec<usize>> = HashMap::new();
    for (s, (a, b)) in segments.iter().enumerate() {
        adj.entry(*a).or_default().push(s);
        adj.entry(*b).or_default().push(s);
    }
    let mut used = vec![false; segments.len()];
    let mut lines = Vec::new();
    // Open chains start at an endpoint with a single segment; closed loops anywhere.
    let mut starts: Vec<usize> = (0..segments.len()).filter(|&s| adj[&segments[s].0].len() == 1 || adj[&segments[s].1].len() == 1).collect();
    starts.extend(0..segments.len());
    for s0 in starts {
        if used[s0] {
            continue;
        }
        let (a, b) = segments[s0];
        let mut key = if adj[&a].len() == 1 { a } else { b };
        let mut keys = vec![key];
        let mut s = s0;
        loop {
            used[s] = true;
            let (p, q) = segments[s];
            key = if p == key { q } else { p };
            keys.push(key);
            match adj[&key].iter().find(|&&t| !used[t]) {
                Some(&t) => s = t,
                None => break,
            }
        }
        lines.push(keys.into_iter().map(point).collect());
    }
    lines
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairInterpolation {
    pub a: MaterialKind,
    pub b: MaterialKind,
    pub alphas: Vec<f64>,
    /// `None` where the reference has zero variance.
    pub r2: Vec<Option<f64>>,
    pub mean_r2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolationReport {
    pub pairs: Vec<PairInterpolation>,
}

/// `α = k / (points + 1)` for `k = 1..=points`.
pub fn interpolation_alphas(points: usize) -> Vec<f64> {
    (1..=points).map(|k| k as f64 / (points + 1) as f64).collect()
}

/// A state to probe the predictor on.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeState {
    pub positions: Vec<Vec2>,
    pub history: Vec<VelocityHistory>,
}

/// `count` states drawn uniformly over classes, trajectories and steps.
pub fn probe_states<R: Rng + ?Sized>(data: &TrainingData, count: usize, rng: &mut R) -> Result<Vec<ProbeState>> {
    (0..count)
        .map(|_| {
            let c = &data.classes[rng.random_range(0..data.classes.len())];
            let (_, t) = &c.trajectories[rng.random_range(0..c.trajectories.len())];
            let step = rng.random_range(step_range(t));
            Ok(ProbeState {
                positions: t.frame(step).to_vec(),
                history: finite_difference_velocities(t, step)?,
            })
        })
        .collect()
}

/// Linearity of predictions along the segment between two encodings:
/// R² of `ŷ(P_α)` against `(1−α)ŷ(P_a) + αŷ(P_b)`, pooled over states,
/// particles and axes, for each interior `α`.
pub fn interpolation_r2_pair<M: Model + ?Sized>(
    model: &M,
    states: &[ProbeState],
    pa: &Encoding,
    pb: &Encoding,
    alphas: &[f64],
) -> Result<Vec<Option<f64>>> {
    let ends = |p: &Encoding| -> Result<Vec<Vec<Vec2>>> { states.iter().map(|s| model.predict(&s.positions, &s.history, p)).collect() };
    let (ya, yb) = (ends(pa)?, ends(pb)?);
    alphas
        .iter()
        .map(|&alpha| {
            let p: Encoding = std::array::from_fn(|d| (1.0 - alpha) * pa[d] + alpha * pb[d]);
            let mut pred = Vec::new();
            let mut reference = Vec::new();
            for (k, s) in states.iter().enumerate() {
                for (i, y) in model.predict(&s.positions, &s.history, &p)?.into_iter().enumerate() {
                    for d in 0..2 {
                        pred.push(y[d]);
                        reference.push((1.0 - alpha) * ya[k][i][d] + alpha * yb[k][i][d]);
                    }
                }
            }
            Ok(r_squared(&pred, &reference))
        })
        .collect()
}

/// `1 − SS_res / SS_tot` against `reference`; `None` when `SS_tot = 0`.
pub fn r_squared(pred: &[f64], reference: &[f64]) -> Option<f64> {
    let mean = reference.iter().sum::<f64>() / reference.len() as f64;
    let ss_tot: f64 = reference.iter().map(|r| (r - mean).powi(2)).sum();
    let ss_res: f64 = pred.iter().zip(reference).map(|(p, r)| (p - r).powi(2)).sum();
    if ss_tot == 0.0 {
        return (ss_res == 0.0).then_some(1.0);
    }
    Some(1.0 - ss_res / ss_tot)
}

/// Interpolation R² for every ordered pair of distinct classes, between
/// the per-class mean encodings.
pub fn interpolation_r2<M: Model + ?Sized>(
    model: &M,
    states: &[ProbeState],
    class_means: &BTreeMap<MaterialKind, Encoding>,
) -> Result<InterpolationReport> {
    let alphas = interpolation_alphas(INTERPOLATION_POINTS);
    let mut pairs = Vec::new();
    for (a, pa) in class_means {
        for (b, pb) in class_means {
            if a == b {
                continue;
            }
            let r2 = interpolation_r2_pair(model, states, pa, pb, &alphas)?;
            let defined: Vec<f64> = r2.iter().flatten().copied().collect();
            let mean_r2 = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
            pairs.push(PairInterpolation {
                a: *a,
                b: *b,
                alphas: alphas.clone(),
                r2,
                mean_r2,
            });
        }
    }
    Ok(InterpolationReport { pairs })
}

/// Sand trajectories of the friction sweep with their clips.
#[derive(Clone, Debug)]
pub struct SweepEntry {
    pub friction_deg: f64,
    pub trajectory: Trajectory,
    pub clip: Option<VideoClip>,
}

/// One-step MSE per friction angle, ascending. Each trajectory is encoded
/// from its own clip (vdgns) or as sand (baseline).
pub fn friction_sweep_eval<M: Model + ?Sized, R: Rng + ?Sized>(
    model: &M,
    entries: &[SweepEntry],
    opts: OneStepOptions,
    rng: &mut R,
) -> Result<Vec<MseRow>> {
    let mut by_angle: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    for e in entries {
        let enc = match &e.clip {
            Some(clip) => {
                let start = sample_window_start(clip.frames.len(), opts.window_n, rng)?;
                model.encode(&clip.frames[start..start + opts.window_n], MaterialKind::Sand)?
            }
            None => model.encode(&[], MaterialKind::Sand)?,
        };
        let slot = by_angle.entry(e.friction_deg.to_bits()).or_insert((e.friction_deg, Vec::new()));
        trajectory_errors(model, &e.trajectory, &enc, opts.step_stride, &mut slot.1)?;
    }
    if by_angle.is_empty() {
        return Err(Error::Dataset("friction sweep has no trajectories".into()));
    }
    let mut rows: Vec<(f64, MseRow)> = by_angle
        .into_values()
        .map(|(angle, errs)| {
            let (mse, std) = mean_std(&errs);
            (
                angle,
                MseRow {
                    label: format!("{angle}"),
                    mse,
                    std,
                    count: errs.len(),
                },
            )
        })
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

pub fn mse_csv(header_label: &str, rows: &[MseRow]) -> String {
    let mut s = format!("{header_label},mse,std,count\n");
    for r in rows {
        let _ = writeln!(s, "{},{:e},{:e},{}", r.label, r.mse, r.std, r.count);
    }
    s
}

/// Long format: one row per (series, step).
pub fn rollout_csv(report: &RolloutReport) -> String {
    let mut s = String::from("series,class,step,wasserstein\n");
    for (k, curve) in &report.mean_curves {
        for (step, d) in curve.iter().enumerate() {
            let _ = writeln!(s, "mean,{k},{step},{d:e}");
        }
    }
    for t in &report.trajectories {
        for (step, d) in t.distances.iter().enumerate() {
            let _ = writeln!(s, "trajectory_{},{},{step},{d:e}", t.trajectory_id, t.class);
        }
    }
    s
}

pub fn interpolation_csv(report: &InterpolationReport) -> String {
    let mut s = String::from("a,b,alpha,r2\n");
    for p in &report.pairs {
        for (alpha, r2) in p.alphas.iter().zip(&p.r2) {
            let r2 = r2.map_or("undefined".to_string(), |v| format!("{v:e}"));
            let _ = writeln!(s, "{},{},{alpha},{r2}", p.a, p.b);
        }
    }
    s
}

pub fn separation_csv(report: &SeparationReport) -> String {
    let mut s = String::from("a,b,mean_distance,mean_intra_std,separated\n");
    for p in &report.pairs {
        let _ = writeln!(s, "{},{},{:e},{:e},{}", p.a, p.b, p.mean_distance, p.mean_intra_std, p.separated);
    }
    s
}

pub fn variance_csv(report: &SeparationReport) -> String {
    let mut s = String::from("class,encoding_variance\n");
    for (k, v) in &report.variances {
        let _ = writeln!(s, "{k},{v:e}");
    }
    s
}
