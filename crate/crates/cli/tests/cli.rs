//! End-to-end runs of the `vdgns` binary on a tiny dataset
//! (2 trajectories per class, 120 frames, roughly 50 particles).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use sha2::{Digest, Sha256};
use vdgns::dataset::Manifest;
use vdgns::mpm::Trajectory;
use vdgns::train::{Checkpoint, Mode};

const SMALL: [&str; 6] = ["--steps", "120", "--set", "sim.radius_range=[0.03, 0.035]", "--per-class", "2"];

fn vdgns(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vdgns")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = vdgns(args);
    assert!(
        out.status.success(),
        "vdgns {args:?} failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn digest(path: &Path) -> String {
    Sha256::digest(std::fs::read(path).unwrap()).iter().map(|b| format!("{b:02x}")).collect()
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Content hash of every file under `root` except the experiment log,
/// which records wall-clock timestamps.
fn tree_hash(root: &Path) -> BTreeMap<PathBuf, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "experiments.jsonl" {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), digest(&p));
            }
        }
    }
    out
}

struct Fixture {
    _dir: tempfile::TempDir,
    data: PathBuf,
    baseline: PathBuf,
    vdgns: PathBuf,
}

/// One dataset and one checkpoint per mode, shared by the tests.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let mut args = vec!["gen-data", "--out", s(&data), "--seed", "5"];
        args.extend(SMALL);
        ok(&args);
        let train = |mode: &str| {
            let out = dir.path().join(mode);
            ok(&["train", "--data", s(&data), "--mode", mode, "--steps", "2", "--window-n", "3", "--batch-size", "2", "--out", s(&out)]);
            out.join("final.vdck")
        };
        let baseline = train("baseline");
        let vdgns = train("vdgns");
        Fixture {
            data,
            baseline,
            vdgns,
            _dir: dir,
        }
    })
}

#[test]
fn gen_data_writes_trajectories_clips_and_manifest() {
    let f = fixture();
    let m = Manifest::load(&f.data).unwrap();
    assert_eq!(m.entries.len(), 8);
    assert!(m.entries.iter().all(|e| e.clip.is_some()));
    assert_eq!(std::fs::read_dir(f.data.join("trajectories")).unwrap().count(), 8);
    assert_eq!(std::fs::read_dir(f.data.join("clips")).unwrap().count(), 8);
    assert!(f.data.join("manifest.json").is_file());
}

#[test]
fn gen_data_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let mut args = vec!["gen-data", "--out", s(&out), "--seed", seed, "--classes", "water,sand"];
        args.extend(SMALL);
        ok(&args);
        tree_hash(&out)
    };
    let a = run("a", "5");
    let b = run("b", "5");
    let c = run("c", "6");
    assert_eq!(a.len(), 1 + 4 + 4);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn gen_data_sweep_has_sixty_sand_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    ok(&["gen-data", "--out", s(&out), "--sweep", "--no-render", "--steps", "110", "--set", "sim.radius_range=[0.03, 0.035]"]);
    let m = Manifest::load(&out).unwrap();
    assert_eq!(m.entries.len(), 60);
    let mut angles: Vec<f64> = m.entries.iter().map(|e| e.friction_deg).collect();
    angles.dedup();
    assert_eq!(angles.len(), 15);

    let report = dir.path().join("report");
    ok(&["sweep", "--ckpt", s(&fixture().baseline), "--data", s(&out), "--out", s(&report), "--stride", "3"]);
    let csv = std::fs::read_to_string(report.join("sweep_mse.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "friction_deg,mse,std,count");
    assert_eq!(lines.len(), 1 + 15);
    assert!(lines[1].starts_with("0,") && lines[15].starts_with("45,"));
}

#[test]
fn unknown_config_key_is_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[train]\nlearnin_rate = 1.0\n").unwrap();
    let out = vdgns(&["gen-data", "--out", s(&dir.path().join("x")), "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learnin_rate"));
    let out = vdgns(&["gen-data", "--out", s(&dir.path().join("x")), "--set", "sim.grid_resolution=7"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn resolved_config_is_printed_and_logged() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[eval]\nwindow_n = 3\nstep_stride = 5\n").unwrap();
    let out = ok(&["eval", "--ckpt", s(&f.baseline), "--data", s(&f.data), "--out", s(dir.path()), "--no-rollout", "--config", s(&cfg), "--seed", "4"]);
    let printed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let resolved = &printed["resolved"];
    assert_eq!(resolved["config"]["eval"]["window_n"], 3);
    assert_eq!(resolved["provenance"]["eval.window_n"], "file");
    assert_eq!(resolved["provenance"]["eval.seed"], "cli");
    assert_eq!(resolved["provenance"]["train.lr"], "default");

    let log = std::fs::read_to_string(dir.path().join("experiments.jsonl")).unwrap();
    let line: serde_json::Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    for key in ["timestamp", "subcommand", "resolved_config", "output_paths", "git_or_build_id"] {
        assert!(line.get(key).is_some(), "missing {key}");
    }
    assert_eq!(line["subcommand"], "eval");
    assert_eq!(line["resolved_config"], *resolved);
}

#[test]
fn baseline_training_never_opens_clips() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir_all(data.join("trajectories")).unwrap();
    std::fs::copy(f.data.join("manifest.json"), data.join("manifest.json")).unwrap();
    for e in std::fs::read_dir(f.data.join("trajectories")).unwrap() {
        let p = e.unwrap().path();
        std::fs::copy(&p, data.join("trajectories").join(p.file_name().unwrap())).unwrap();
    }
    // The manifest still lists every clip, but none of the files exist.
    assert!(!data.join("clips").exists());
    let out = dir.path().join("run");
    ok(&["train", "--data", s(&data), "--mode", "baseline", "--steps", "1", "--out", s(&out)]);
    let ckpt = Checkpoint::load(&out.join("final.vdck")).unwrap();
    assert_eq!(ckpt.step, 1);
    assert_eq!(ckpt.models.mode(), Mode::Baseline);

    let vd = vdgns(&["train", "--data", s(&data), "--mode", "vdgns", "--steps", "1", "--out", s(&dir.path().join("vd"))]);
    assert_eq!(vd.status.code(), Some(1));
}

#[test]
fn resume_matches_a_straight_run_bit_for_bit() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let straight = dir.path().join("straight");
    let common = ["--mode", "vdgns", "--window-n", "3", "--batch-size", "2", "--checkpoint-every", "2", "--seed", "11"];
    let mut args = vec!["train", "--data", s(&f.data), "--steps", "4", "--out", s(&straight)];
    args.extend(common);
    ok(&args);

    let first = dir.path().join("first");
    let mut args = vec!["train", "--data", s(&f.data), "--steps", "2", "--out", s(&first)];
    args.extend(common);
    ok(&args);
    let resumed = dir.path().join("resumed");
    ok(&["train", "--data", s(&f.data), "--resume", s(&first.join("final.vdck")), "--steps", "4", "--out", s(&resumed)]);

    // Same state at step 2; only the stored target step count differs.
    let mid = Checkpoint::load(&straight.join("checkpoints/step_000002.vdck")).unwrap();
    let mut short = Checkpoint::load(&first.join("final.vdck")).unwrap();
    short.config.total_steps = mid.config.total_steps;
    assert!(mid == short);
    assert_eq!(digest(&straight.join("final.vdck")), digest(&resumed.join("final.vdck")));
}

#[test]
fn nan_loss_exits_four_with_last_good_checkpoint() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = vdgns(&["train", "--data", s(&f.data), "--mode", "baseline", "--steps", "6", "--lr", "1e300", "--checkpoint-every", "1", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("last good checkpoint") && err.contains("step_0000"), "{err}");
}

#[test]
fn rollout_writes_the_predicted_frames_deterministically() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let m = Manifest::load(&f.data).unwrap();
    let e = &m.entries[2];
    let traj = m.resolve(&e.path);
    let clip = m.resolve(e.clip.as_ref().unwrap());
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&["rollout", "--ckpt", s(&f.vdgns), "--traj", s(&traj), "--video", s(&clip), "--window-n", "3", "--steps", "400", "--out", s(&out), "--frames-every", "100"]);
        out
    };
    let a = run("a.vdtr");
    let b = run("b.vdtr");
    let predicted = Trajectory::load(&a).unwrap();
    assert_eq!(predicted.steps(), 400);
    assert_eq!(predicted.class(), e.class);
    assert!(predicted.positions.iter().all(|p| (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1])));
    assert_eq!(digest(&a), digest(&b));
    assert_eq!(std::fs::read_dir(dir.path().join("a.frames")).unwrap().count(), 4);

    let base = dir.path().join("base.vdtr");
    ok(&["rollout", "--ckpt", s(&f.baseline), "--traj", s(&traj), "--class", &e.class.to_string(), "--steps", "5", "--out", s(&base)]);
    assert_eq!(Trajectory::load(&base).unwrap().steps(), 5);
}

#[test]
fn rollout_conditioning_must_match_the_checkpoint_mode() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let m = Manifest::load(&f.data).unwrap();
    let traj = m.resolve(&m.entries[0].path);
    let clip = m.resolve(m.entries[0].clip.as_ref().unwrap());
    let out = s(&dir.path().join("x.vdtr")).to_string();
    let r = vdgns(&["rollout", "--ckpt", s(&f.vdgns), "--traj", s(&traj), "--class", "water", "--out", &out]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("--video"));
    let r = vdgns(&["rollout", "--ckpt", s(&f.baseline), "--traj", s(&traj), "--video", s(&clip), "--out", &out]);
    assert_eq!(r.status.code(), Some(2));
    let r = vdgns(&["rollout", "--ckpt", s(&f.baseline), "--traj", s(&traj), "--out", &out]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn eval_emits_four_class_rows_and_rollout_curves() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    ok(&["eval", "--ckpt", s(&f.vdgns), "--data", s(&f.data), "--out", s(dir.path()), "--window-n", "3", "--stride", "2", "--rollout-steps", "3"]);
    let csv = std::fs::read_to_string(dir.path().join("one_step_mse.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    let labels: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["water", "sand", "snow", "elastic"]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("rollout.json")).unwrap()).unwrap();
    assert_eq!(report["start_step"], 103);
    assert_eq!(report["steps"], 3);
    assert!(dir.path().join("rollout.csv").is_file());
}

#[test]
fn analyze_emits_one_encoding_per_clip() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    ok(&["analyze", "--ckpt", s(&f.vdgns), "--data", s(&f.data), "--out", s(dir.path()), "--window-n", "3", "--probe-states", "1"]);
    let csv = std::fs::read_to_string(dir.path().join("encodings.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 8);
    for r in &rows {
        let fields: Vec<&str> = r.split(',').collect();
        assert_eq!(fields.len(), 2 + 4);
        assert!(fields[2..].iter().all(|v| v.parse::<f64>().unwrap().is_finite()));
    }
    let var = std::fs::read_to_string(dir.path().join("encoding_variance.csv")).unwrap();
    assert_eq!(var.lines().count(), 5);
    let r2 = std::fs::read_to_string(dir.path().join("interpolation_r2.csv")).unwrap();
    assert_eq!(r2.lines().count(), 1 + 12 * 10);
    for name in ["separation.csv", "pca.json", "kde.json", "interpolation_r2.json"] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
}

#[test]
fn reports_are_reproducible() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&["eval", "--ckpt", s(&f.vdgns), "--data", s(&f.data), "--out", s(&out), "--window-n", "3", "--stride", "4", "--rollout-steps", "2"]);
        tree_hash(&out)
    };
    assert_eq!(run("a"), run("b"));
}
