//! Acceptance report: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.
//!
//! Criteria 6, 7 and the trained half of 8 need a desk-scale training run
//! (see `scripts/desk_run.sh`). Point `VDGNS_DESK_RUN` at its output
//! directory to evaluate them; without it they report the measured cost of
//! such a run and fail.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use common::synthetic_data;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vdgns::dataset::{generate_dataset, render_clips, Manifest};
use vdgns::eval::*;
use vdgns::gns::{advance, semi_implicit_euler};
use vdgns::graph::{build_graph, finite_difference_velocities, radius_edges, target_acceleration, VelocityHistory, DEFAULT_RADIUS};
use vdgns::mpm::*;
use vdgns::nn::{gradient_check, GradCheckOptions, Tensor};
use vdgns::render::{BackgroundSet, Frame};
use vdgns::train::*;
use vdgns::video::stack_windows;
use vdgns::graph::Encoding;

type Outcome = Result<String, String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

/// 1. Finite-difference check of the full composite model.
fn autodiff_soundness() -> Outcome {
    let start = Instant::now();
    let data = synthetic_data(1, 5, 130, 64, 4);
    let cfg = TrainConfig {
        window_n: 2,
        seed: 7,
        ..TrainConfig::default()
    };
    let trainer = ok(Trainer::new(&data, cfg))?;
    let item = &ok(sample_batch(&data, &mut rng(8), &cfg))?[0];
    let VideoSource::Clip { class_index, clip, start: s, len } = item.video else {
        return Err("vdgns batch item without a clip".into());
    };
    let frames = &data.classes[class_index].clips[clip].frames[s..s + len];
    check(frames.len() == 2 && frames[0].width == 64 && frames[0].height == 64, || "expected two 64x64 frames".into())?;
    let pixels = ok(stack_windows(&[frames]))?;
    let g = ok(build_graph(&item.positions, &item.history, &[0.0; 4], DEFAULT_RADIUS))?;
    check(g.num_vertices() == 5 && g.num_edges() > 0, || "expected a connected 5-particle graph".into())?;
    let target = ok(Tensor::from_vec(5, 2, (0..10).map(|k| (0.3 * k as f64).sin()).collect()))?;
    let mut merged = trainer.models.gns.clone();
    merged.extend(trainer.models.video.clone().expect("vdgns model"));
    let report = ok(gradient_check(
        |tape, p| composite_loss(tape, p, &pixels, &g, &target),
        &merged,
        &GradCheckOptions {
            sample_size: 1500,
            ..Default::default()
        },
    ))?;
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "max rel err {:.2e} over {} coords of {} tensors, {secs:.1}s",
        report.max_relative_error,
        report.coords_checked,
        merged.len()
    );
    check(report.max_relative_error < 1e-4 && secs < 60.0, || detail.clone())?;
    Ok(detail)
}

/// 2. Semi-implicit Euler closed form and ground-truth injection.
fn integrator_exactness() -> Outcome {
    let (x0, v0, a, dt) = ([0.1, 0.9], [0.5, -0.25], [-0.75, 1.5], 0.01);
    let (mut x, mut v) = (vec![x0], vec![v0]);
    let mut worst = 0.0f64;
    for k in 1..=1000u32 {
        (x, v) = semi_implicit_euler(&x, &v, &[a], dt);
        let kf = k as f64;
        for d in 0..2 {
            let want = x0[d] + v0[d] * kf * dt + a[d] * dt * dt * kf * (kf + 1.0) / 2.0;
            worst = worst.max((x[0][d] - want).abs());
        }
    }
    check(worst < 1e-12, || format!("closed-form error {worst:.2e}"))?;

    let traj = ok(generate_trajectory(
        &SimConfig {
            steps: 140,
            radius_range: (0.06, 0.06),
            ..SimConfig::default()
        },
        &MaterialSpec::new(MaterialKind::Sand),
        &mut rng(3),
    ))?;
    let mut inject = 0.0f64;
    for t in 3..traj.steps() - 1 {
        let hist = ok(finite_difference_velocities(&traj, t))?;
        let step = advance(traj.frame(t), &hist, ok(target_acceleration(&traj, t))?);
        for (p, q) in step.positions.iter().zip(traj.frame(t + 1)) {
            inject = inject.max((p[0] - q[0]).abs()).max((p[1] - q[1]).abs());
        }
    }
    check(inject < 1e-12, || format!("injection error {inject:.2e}"))?;
    Ok(format!("closed form {worst:.1e}, injection {inject:.1e} over {} steps of {} particles", traj.steps() - 4, traj.num_particles))
}

fn brute_force_edges(p: &[Vec2], radius: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for r in 0..p.len() {
        for s in 0..p.len() {
            let d = [p[s][0] - p[r][0], p[s][1] - p[r][1]];
            if s != r && d[0] * d[0] + d[1] * d[1] < radius * radius {
                out.push((s, r));
            }
        }
    }
    out.sort();
    out
}

/// 3. Radius graph against brute force.
fn graph_oracle() -> Outcome {
    let mut r = rng(5);
    let mut edges = 0;
    for i in 0..500 {
        let n = r.random_range(0..=200);
        let pts: Vec<Vec2> = (0..n).map(|_| [r.random_range(0.0..1.0), r.random_range(0.0..1.0)]).collect();
        let mut got = radius_edges(&pts, DEFAULT_RADIUS);
        got.sort();
        let want = brute_force_edges(&pts, DEFAULT_RADIUS);
        check(got == want, || format!("instance {i} (N={n}): {} vs {} edges", got.len(), want.len()))?;
        edges += want.len();
    }
    Ok(format!("500 instances, {edges} edges, 0 discrepancies"))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

/// 4. Wasserstein distance against factorial brute force, and metric axioms.
fn ot_oracle() -> Outcome {
    let mut r = rng(6);
    let pts = |n: usize, r: &mut ChaCha8Rng| -> Vec<Vec2> { (0..n).map(|_| [r.random_range(0.0..1.0), r.random_range(0.0..1.0)]).collect() };
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = r.random_range(1..=7);
        let (a, b) = (pts(n, &mut r), pts(n, &mut r));
        let got = ok(wasserstein_distance(&a, &b))?;
        let want = permutations(n)
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| (a[i][0] - b[j][0]).hypot(a[i][1] - b[j][1])).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
            / n as f64;
        worst = worst.max((got - want).abs());
    }
    check(worst < 1e-12, || format!("brute-force error {worst:.2e}"))?;
    for i in 0..1000 {
        let n = r.random_range(1..=12);
        let (a, b, c) = (pts(n, &mut r), pts(n, &mut r), pts(n, &mut r));
        let ab = ok(wasserstein_distance(&a, &b))?;
        let ba = ok(wasserstein_distance(&b, &a))?;
        let bc = ok(wasserstein_distance(&b, &c))?;
        let ac = ok(wasserstein_distance(&a, &c))?;
        check(ab == ba, || format!("triple {i}: asymmetric {ab} vs {ba}"))?;
        check(ac <= ab + bc + 1e-12, || format!("triple {i}: triangle {ac} > {ab} + {bc}"))?;
    }
    Ok(format!("max brute-force error {worst:.1e} over 200 instances; 1000 triples symmetric and triangular"))
}

/// 5. Class-matched videos and the 1/30 same-trajectory rate.
fn batching_contract() -> Outcome {
    let data = synthetic_data(30, 2, 500, 2, 80);
    let cfg = TrainConfig::default();
    let mut r = rng(9);
    let (mut same, mut total) = (0usize, 0usize);
    while total < 10_000 {
        for item in ok(sample_batch(&data, &mut r, &cfg))? {
            let VideoSource::Clip { class_index, clip, .. } = item.video else {
                return Err("vdgns item without a clip".into());
            };
            check(data.classes[class_index].clips[clip].class == item.class, || format!("item {total}: video class differs"))?;
            same += (item.video_trajectory_id == Some(item.trajectory_id)) as usize;
            total += 1;
        }
    }
    let p = 1.0 / 30.0;
    let expected = total as f64 * p;
    let sigma = (total as f64 * p * (1.0 - p)).sqrt();
    let detail = format!("{same} same-trajectory pairs in {total} items (expected {expected:.1} ± {:.1})", 3.0 * sigma);
    check((same as f64 - expected).abs() <= 3.0 * sigma, || detail.clone())?;
    Ok(detail)
}

/// Outputs of a desk-scale run, laid out by `scripts/desk_run.sh`.
struct Desk {
    eval: TrainingData,
    baseline_initial: Checkpoint,
    baseline: Checkpoint,
    vdgns: Checkpoint,
    stride: usize,
}

const DESK_STEPS: u64 = 20_000;

fn desk() -> Option<&'static Result<Desk, String>> {
    static DESK: OnceLock<Option<Result<Desk, String>>> = OnceLock::new();
    DESK.get_or_init(|| {
        let root = PathBuf::from(std::env::var_os("VDGNS_DESK_RUN")?);
        let load = |p: &Path| Checkpoint::load(&root.join(p)).map_err(|e| e.to_string());
        Some((|| {
            let manifest = Manifest::load(&root.join("eval")).map_err(|e| e.to_string())?;
            let stride = std::env::var("VDGNS_DESK_STRIDE").ok().and_then(|s| s.parse().ok()).unwrap_or(10);
            Ok(Desk {
                eval: TrainingData::from_manifest(&manifest, true).map_err(|e| e.to_string())?,
                baseline_initial: load(Path::new("baseline/checkpoints/step_000000.vdck"))?,
                baseline: load(Path::new("baseline/final.vdck"))?,
                vdgns: load(Path::new("vdgns/final.vdck"))?,
                stride,
            })
        })())
    })
    .as_ref()
}

fn desk_mse(d: &Desk, model: &Models) -> Result<f64, String> {
    let opts = OneStepOptions {
        window_n: 20,
        step_stride: d.stride,
    };
    Ok(pooled_mse(&ok(one_step_mse(model, &d.eval, opts, &mut rng(100)))?))
}

/// Seconds per training step on a dataset shaped like the desk run
/// (one trajectory per class here, ~330 particles, batch 8).
fn measured_step_seconds() -> Result<(f64, f64, usize), String> {
    let dir = ok(tempfile::tempdir())?;
    let sim = SimConfig {
        steps: 200,
        radius_range: (0.075, 0.085),
        seed: 11,
        ..SimConfig::default()
    };
    let mut manifest = ok(generate_dataset(&sim, dir.path(), 1, &MaterialKind::ALL))?;
    ok(render_clips(&mut manifest, &BackgroundSet::builtin()))?;
    let data = ok(TrainingData::from_manifest(&manifest, true))?;
    let particles = data.classes.iter().map(|c| c.trajectories[0].1.num_particles).sum::<usize>() / 4;
    let time = |mode: Mode| -> Result<f64, String> {
        let mut t = ok(Trainer::new(&data, TrainConfig { mode, ..TrainConfig::default() }))?;
        let start = Instant::now();
        ok(t.train_step())?;
        Ok(start.elapsed().as_secs_f64())
    };
    Ok((time(Mode::Baseline)?, time(Mode::Vdgns)?, particles))
}

fn no_desk_run() -> String {
    let cost = match measured_step_seconds() {
        Ok((b, v, n)) => format!(
            "measured {b:.1}s (baseline) and {v:.1}s (vdgns) per 8-item step at ~{n} particles on 1 core; 2 x {DESK_STEPS} steps project to {:.0} CPU-hours",
            (b + v) * DESK_STEPS as f64 / 3600.0
        ),
        Err(e) => format!("step timing failed: {e}"),
    };
    format!("no desk-scale run (set VDGNS_DESK_RUN); {cost}")
}

/// 6. Desk-scale learning signal.
fn learning_signal() -> Outcome {
    let Some(d) = desk() else { return Err(no_desk_run()) };
    let d = d.as_ref().map_err(|e| format!("desk run unreadable: {e}"))?;
    check(d.baseline.step == DESK_STEPS && d.vdgns.step == DESK_STEPS, || {
        format!("runs stopped at {} and {} steps, not {DESK_STEPS}", d.baseline.step, d.vdgns.step)
    })?;
    let m0 = desk_mse(d, &d.baseline_initial.models)?;
    let mb = desk_mse(d, &d.baseline.models)?;
    let mv = desk_mse(d, &d.vdgns.models)?;
    let detail = format!("baseline {m0:.3e} -> {mb:.3e} ({:.1}x), vdgns {mv:.3e} ({:.2}x baseline)", m0 / mb, mv / mb);
    check(m0 / mb >= 10.0 && mv <= 3.0 * mb, || detail.clone())?;
    Ok(detail)
}

/// 7. Per-class encoding separation of the trained video encoder.
fn encoding_separation() -> Outcome {
    let Some(d) = desk() else {
        return Err("needs the desk-scale vdgns checkpoint (see criterion 6)".into());
    };
    let d = d.as_ref().map_err(|e| format!("desk run unreadable: {e}"))?;
    let encs = ok(clip_encodings(&d.vdgns.models, &d.eval, 20, &mut rng(200)))?;
    let report = ok(class_separation(&encs))?;
    let separated = report.pairs.iter().filter(|p| p.separated).count();
    let variances_ok = report.variances.values().all(|v| v.is_finite() && *v > 0.0);
    let detail = format!("{separated}/6 pairs separated; variances {:?}", report.variances.values().collect::<Vec<_>>());
    check(separated >= 4 && variances_ok && report.variances.len() == 4, || detail.clone())?;
    Ok(detail)
}

/// Predictions exactly affine in the encoding.
struct AffineInP;

impl Model for AffineInP {
    fn predict(&self, positions: &[Vec2], history: &[VelocityHistory], p: &Encoding) -> vdgns::Result<Vec<Vec2>> {
        Ok(positions
            .iter()
            .zip(history)
            .map(|(x, h)| [0.7 * p[0] - 1.3 * p[1] + 2.0 * p[3] + x[0] * x[1] + h[0][0], -0.4 * p[2] + 0.9 * p[3] + (5.0 * x[1]).sin()])
            .collect())
    }

    fn encode(&self, _: &[Frame], kind: MaterialKind) -> vdgns::Result<Encoding> {
        Ok([kind.id() as f64; 4])
    }
}

/// 8. Interpolation linearity.
fn linearity() -> Outcome {
    let data = synthetic_data(2, 6, 130, 2, 10);
    let states = ok(probe_states(&data, 5, &mut rng(10)))?;
    let means: BTreeMap<MaterialKind, Encoding> = MaterialKind::ALL
        .iter()
        .enumerate()
        .map(|(k, &kind)| (kind, [k as f64, 1.0 - 0.3 * k as f64, 0.2 * k as f64, -0.5 + k as f64]))
        .collect();
    let report = ok(interpolation_r2(&AffineInP, &states, &means))?;
    let mut worst = 0.0f64;
    for p in &report.pairs {
        for r2 in &p.r2 {
            worst = worst.max(r2.map_or(f64::INFINITY, |v| (v - 1.0).abs()));
        }
    }
    check(report.pairs.len() == 12 && worst < 1e-10, || format!("affine predictor: max |R2 - 1| = {worst:.2e}"))?;
    let synthetic = format!("affine predictor max |R2 - 1| = {worst:.1e}");

    let Some(d) = desk() else {
        return Err(format!("{synthetic} (ok); trained-model part needs the desk-scale run (see criterion 6)"));
    };
    let d = d.as_ref().map_err(|e| format!("desk run unreadable: {e}"))?;
    let encs = ok(clip_encodings(&d.vdgns.models, &d.eval, 20, &mut rng(300)))?;
    let sep = ok(class_separation(&encs))?;
    let probe = ok(probe_states(&d.eval, 8, &mut rng(301)))?;
    let trained = ok(interpolation_r2(&d.vdgns.models, &probe, &sep.means))?;
    let csv = interpolation_csv(&trained);
    let values: Vec<Option<f64>> = trained.pairs.iter().flat_map(|p| p.r2.clone()).collect();
    let defined = values.iter().all(|v| v.is_some_and(|x| x <= 1.0 && !x.is_nan()));
    check(trained.pairs.len() == 12 && values.len() == 120 && defined && csv.lines().count() == 121, || {
        format!("{synthetic}; trained model has undefined or out-of-range R2")
    })?;
    let min = values.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    Ok(format!("{synthetic}; trained model: 120 values defined, min {min:.3}"))
}

fn rms(a: &[Vec2], b: &[Vec2]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(p, q)| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sum();
    (s / a.len() as f64).sqrt()
}

/// Least-squares `y = a + b t + c t²`; returns `2c`.
fn fitted_acceleration(t: &[f64], y: &[f64]) -> f64 {
    let mut m = [[0.0; 4]; 3];
    for (&ti, &yi) in t.iter().zip(y) {
        let row = [1.0, ti, ti * ti];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] += row[r] * row[c];
            }
            m[r][3] += row[r] * yi;
        }
    }
    for col in 0..3 {
        for r in col + 1..3 {
            let f = m[r][col] / m[col][col];
            for c in col..4 {
                m[r][c] -= f * m[col][c];
            }
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        x[r] = (m[r][3] - (r + 1..3).map(|c| m[r][c] * x[c]).sum::<f64>()) / m[r][r];
    }
    2.0 * x[2]
}

/// 9. Simulator physics sanity.
fn physics_sanity() -> Outcome {
    let cfg = SimConfig::default();
    let mut notes = Vec::new();

    let fall = SimConfig { steps: 12, ..cfg.clone() };
    let mut worst_g = 0.0f64;
    for kind in MaterialKind::ALL {
        let sys = fill_circle(&fall, Circle { center: [0.4, 0.7], radius: 0.12 }, &mut rng(4));
        let t = ok(simulate(&fall, &MaterialSpec::new(kind), sys, 0))?;
        let com: Vec<f64> = (0..11).map(|k| t.frame(k).iter().map(|p| p[1]).sum::<f64>() / t.num_particles as f64).collect();
        let times: Vec<f64> = (0..11).map(|k| k as f64 * OUTPUT_DT).collect();
        let g = fitted_acceleration(&times, &com);
        worst_g = worst_g.max((g + 9.8).abs() / 9.8);
    }
    check(worst_g <= 0.05, || format!("COM acceleration off by {:.1}%", 100.0 * worst_g))?;
    notes.push(format!("gravity within {:.2}%", 100.0 * worst_g));

    let mut worst_mirror = 0.0f64;
    for kind in MaterialKind::ALL {
        let m = MaterialSpec::new(kind);
        let (sys, _) = init_scene(&SimConfig { radius_range: (0.08, 0.08), ..cfg.clone() }, &m, &mut rng(1));
        let a = ok(simulate(&cfg, &m, sys.clone(), 0))?;
        let b = ok(simulate(&cfg, &m, sys.mirrored(), 0))?;
        for t in [&a, &b] {
            check(t.positions.iter().all(|p| (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1])), || {
                format!("{kind}: particle left the domain")
            })?;
        }
        let reflected: Vec<Vec2> = b.positions.iter().map(|p| [1.0 - p[0], p[1]]).collect();
        worst_mirror = worst_mirror.max(rms(&a.positions, &reflected));
    }
    check(worst_mirror <= 1e-6, || format!("mirror RMS {worst_mirror:.2e}"))?;
    notes.push(format!("mirror RMS {worst_mirror:.1e} over 500 steps, contained"));

    let circle_cfg = SimConfig { radius_range: (0.08, 0.08), ..cfg.clone() };
    let circle = sample_circle(&circle_cfg, &mut rng(1));
    let init = fill_circle(&circle_cfg, circle, &mut rng(101));
    let reseeded = fill_circle(&circle_cfg, circle, &mut rng(202));
    let water = MaterialSpec::new(MaterialKind::Water);
    let a = ok(simulate(&cfg, &water, init.clone(), 0))?;
    let b = ok(simulate(&cfg, &water, reseeded, 0))?;
    let sand = ok(simulate(&cfg, &ok(MaterialSpec::sand(0.0))?, init, 0))?;
    let reseed = rms(&a.positions, &b.positions);
    let gap = rms(&a.positions, &sand.positions);
    check(gap < 10.0 * reseed, || format!("sand(0) vs water RMS {gap:.3e} >= 10 x reseed {reseed:.3e}"))?;
    notes.push(format!("sand(0) vs water {:.2}x the reseed variation", gap / reseed));
    Ok(notes.join("; "))
}

/// 10. Determinism and persistence.
fn determinism() -> Outcome {
    let data = synthetic_data(2, 6, 130, 4, 10);
    let cfg = TrainConfig {
        mode: Mode::Vdgns,
        seed: 31,
        window_n: 3,
        total_steps: 5,
        checkpoint_every: 2,
        ..TrainConfig::default()
    };
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let a = ok(train(&data, cfg, dirs[0].path(), |_, _| {}))?;
    let b = ok(train(&data, cfg, dirs[1].path(), |_, _| {}))?;
    let bytes = ok(std::fs::read(&a.final_checkpoint))?;
    check(bytes == ok(std::fs::read(&b.final_checkpoint))?, || "fixed-seed runs differ".into())?;

    let short = ok(train(&data, TrainConfig { total_steps: 2, ..cfg }, dirs[2].path(), |_, _| {}))?;
    let resumed = ok(resume(&data, &short.final_checkpoint, Some(5), dirs[2].path(), |_, _| {}))?;
    check(ok(std::fs::read(&resumed.final_checkpoint))? == bytes, || "resume(2)+3 differs from 5 straight steps".into())?;

    let back = ok(Checkpoint::load(&a.final_checkpoint))?;
    check(back == a.checkpoint, || "checkpoint round trip changed the state".into())?;
    let probe = ok(probe_states(&data, 4, &mut rng(2)))?;
    let enc = [0.3, -0.2, 0.1, 0.5];
    for s in &probe {
        let p1 = ok(a.checkpoint.models.predict(&s.positions, &s.history, &enc))?;
        let p2 = ok(back.models.predict(&s.positions, &s.history, &enc))?;
        check(p1 == p2, || "probe predictions changed after reload".into())?;
    }

    let report = |m: &Models| -> Result<String, String> {
        let mut r = rng(50);
        let rows = ok(one_step_mse(m, &data, OneStepOptions { window_n: 3, step_stride: 5 }, &mut r))?;
        let roll = ok(rollout_error_curves(m, &data, 5, 3, &mut r))?;
        Ok(mse_csv("class", &rows) + &rollout_csv(&roll))
    };
    check(report(&a.checkpoint.models)? == report(&back.models)?, || "reports differ between runs".into())?;
    Ok(format!("checkpoints ({} bytes), resume 2+3 == 5, probe predictions and reports bit-identical", bytes.len()))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "autodiff soundness", autodiff_soundness),
        (2, "integrator exactness", integrator_exactness),
        (3, "graph oracle", graph_oracle),
        (4, "OT oracle", ot_oracle),
        (5, "batching contract", batching_contract),
        (6, "desk-scale learning signal", learning_signal),
        (7, "encoding separation", encoding_separation),
        (8, "linearity", linearity),
        (9, "simulator physics", physics_sanity),
        (10, "determinism and persistence", determinism),
    ];
    let mut failed = 0;
    for (n, name, run) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        let (status, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n:>2} [{name}]: {status} ({secs:.1}s) {detail}");
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
