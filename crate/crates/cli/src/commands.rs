use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use vdgns::dataset::{self, Manifest};
use vdgns::eval::{self, OneStepOptions, SweepEntry};
use vdgns::gns;
use vdgns::graph::finite_difference_velocities;
use vdgns::mpm::{MaterialKind, Trajectory};
use vdgns::render::{render_frame, BackgroundSet, RenderStyle, VideoClip};
use vdgns::train::{self, Checkpoint, Mode, TrainingData};

use crate::config::{parse_override, resolve, Resolved};
use crate::log::{self, io_err};
use crate::{CliError, CliResult, Common};

/// Colour used for PPM frame dumps when the conditioning clip's style is unknown.
const DUMP_STYLE: RenderStyle = RenderStyle {
    material_color: [0.95, 0.55, 0.15],
    alpha: 1.0,
    background_id: 0,
};

fn resolve_with(common: &Common, flags: Vec<(&str, Option<Value>)>) -> CliResult<Resolved> {
    let mut overrides = common.overrides.iter().map(|s| parse_override(s)).collect::<CliResult<Vec<_>>>()?;
    overrides.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
    resolve(common.config.as_deref(), &overrides)
}

fn announce(subcommand: &str, resolved: &Resolved) {
    let doc = json!({ "subcommand": subcommand, "resolved": resolved.to_json() });
    println!("{}", serde_json::to_string_pretty(&doc).expect("json"));
}

fn write_text(path: &Path, text: &str, outputs: &mut Vec<PathBuf>) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))?;
    outputs.push(path.to_path_buf());
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize, outputs: &mut Vec<PathBuf>) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_text(path, &text, outputs)
}

fn flag<T: Into<Value>>(v: Option<T>) -> Option<Value> {
    v.map(Into::into)
}

fn parse_class(s: &str) -> CliResult<MaterialKind> {
    match s.trim().parse::<u32>() {
        Ok(id) => MaterialKind::from_id(id).map_err(|e| CliError::Usage(e.to_string())),
        Err(_) => s.parse().map_err(|e: vdgns::Error| CliError::Usage(e.to_string())),
    }
}

fn backgrounds(dir: Option<&Path>) -> CliResult<BackgroundSet> {
    Ok(match dir {
        Some(d) => BackgroundSet::load_dir(d)?,
        None => BackgroundSet::builtin(),
    })
}

fn load_manifest(path: &Path) -> CliResult<Manifest> {
    Ok(Manifest::load(path)?)
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated class names or ids.
    #[arg(long)]
    pub classes: Option<String>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Recorded frames per trajectory.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Generate the sand friction sweep instead.
    #[arg(long)]
    pub sweep: bool,
    /// Skip clip rendering.
    #[arg(long)]
    pub no_render: bool,
    #[arg(long)]
    pub backgrounds: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

pub fn gen_data(a: GenDataArgs) -> CliResult<()> {
    let classes = match &a.classes {
        Some(list) => Some(Value::from(
            list.split(',').map(|s| parse_class(s).map(|k| k.name())).collect::<CliResult<Vec<_>>>()?,
        )),
        None => None,
    };
    let resolved = resolve_with(
        &a.common,
        vec![
            ("data.classes", classes),
            ("data.per_class", flag(a.per_class)),
            ("sim.seed", flag(a.seed)),
            ("sim.steps", flag(a.steps)),
            ("data.sweep", a.sweep.then_some(Value::Bool(true))),
            ("data.render", a.no_render.then_some(Value::Bool(false))),
            ("data.backgrounds", flag(a.backgrounds.as_ref().map(|p| p.display().to_string()))),
        ],
    )?;
    announce("gen-data", &resolved);
    let cfg = &resolved.config;
    if cfg.data.classes.is_empty() && !cfg.data.sweep {
        return Err(CliError::Usage("no classes selected".into()));
    }
    std::fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    let bg = backgrounds(cfg.data.backgrounds.as_deref())?;
    let mut manifest = if cfg.data.sweep {
        dataset::friction_sweep_dataset(&cfg.sim, &a.out)?
    } else {
        dataset::generate_dataset(&cfg.sim, &a.out, cfg.data.per_class, &cfg.data.classes)?
    };
    if cfg.data.render {
        dataset::render_clips(&mut manifest, &bg)?;
    }
    let mut outputs = vec![a.out.join(dataset::MANIFEST_FILE)];
    for e in &manifest.entries {
        outputs.push(manifest.resolve(&e.path));
        if let Some(c) = &e.clip {
            outputs.push(manifest.resolve(c));
        }
    }
    eprintln!(
        "wrote {} trajectories and {} clips to {}",
        manifest.entries.len(),
        manifest.entries.iter().filter(|e| e.clip.is_some()).count(),
        a.out.display()
    );
    log::append(&a.out, "gen-data", &resolved, &outputs)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Manifest file or dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub backgrounds: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

pub fn render(a: RenderArgs) -> CliResult<()> {
    let resolved = resolve_with(
        &a.common,
        vec![("data.backgrounds", flag(a.backgrounds.as_ref().map(|p| p.display().to_string())))],
    )?;
    announce("render", &resolved);
    let mut manifest = load_manifest(&a.data)?;
    let bg = backgrounds(resolved.config.data.backgrounds.as_deref())?;
    dataset::render_clips(&mut manifest, &bg)?;
    let mut outputs = vec![manifest.root.join(dataset::MANIFEST_FILE)];
    outputs.extend(manifest.entries.iter().filter_map(|e| e.clip.as_ref().map(|c| manifest.resolve(c))));
    eprintln!("rendered {} clips", outputs.len() - 1);
    let root = manifest.root.clone();
    log::append(&root, "render", &resolved, &outputs)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Manifest file or dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = ["vdgns", "baseline"])]
    pub mode: Option<String>,
    /// Total optimizer steps.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Output directory for checkpoints and the loss log.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint; its stored configuration is used.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub window_n: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Disable training noise.
    #[arg(long)]
    pub no_noise: bool,
    #[command(flatten)]
    pub common: Common,
}

pub fn train(a: TrainArgs) -> CliResult<()> {
    let mut resolved = resolve_with(
        &a.common,
        vec![
            ("train.mode", flag(a.mode.clone())),
            ("train.total_steps", flag(a.steps)),
            ("train.seed", flag(a.seed)),
            ("train.lr", flag(a.lr)),
            ("train.batch_size", flag(a.batch_size)),
            ("train.window_n", flag(a.window_n)),
            ("train.checkpoint_every", flag(a.checkpoint_every)),
            ("train.noise.enabled", a.no_noise.then_some(Value::Bool(false))),
        ],
    )?;
    let resume_from = match &a.resume {
        Some(path) => {
            let mut ckpt = Checkpoint::load(path)?;
            if let Some(n) = a.steps {
                ckpt.config.total_steps = n;
            }
            resolved.adopt_train(ckpt.config.clone());
            Some(path.clone())
        }
        None => None,
    };
    announce("train", &resolved);
    let cfg = resolved.config.train.clone();
    let manifest = load_manifest(&a.data)?;
    // Baseline runs never open a clip file.
    let data = TrainingData::from_manifest(&manifest, cfg.mode == Mode::Vdgns)?;
    let every = (cfg.total_steps / 20).max(1);
    let progress = |step: u64, loss: f64| {
        if step % every == 0 || step == cfg.total_steps {
            eprintln!("step {step}/{} loss {loss:.6e}", cfg.total_steps);
        }
    };
    let outcome = match resume_from {
        Some(path) => train::resume(&data, &path, a.steps, &a.out, progress)?,
        None => train::train(&data, cfg.clone(), &a.out, progress)?,
    };
    eprintln!("final checkpoint: {}", outcome.final_checkpoint.display());
    let mut outputs = vec![outcome.final_checkpoint.clone(), a.out.join(train::LOSS_LOG)];
    let mut periodic: Vec<PathBuf> = std::fs::read_dir(a.out.join(train::CHECKPOINT_DIR))
        .map(|rd| rd.filter_map(|e| e.ok().map(|e| e.path())).collect())
        .unwrap_or_default();
    periodic.sort();
    outputs.extend(periodic);
    log::append(&a.out, "train", &resolved, &outputs)?;
    Ok(())
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("conditioning").required(true).args(["video", "class"])))]
pub struct RolloutArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Trajectory providing the initial state and velocity history.
    #[arg(long)]
    pub traj: PathBuf,
    /// Clip to condition a vdgns model on.
    #[arg(long)]
    pub video: Option<PathBuf>,
    /// Class name or id to condition a baseline model on.
    #[arg(long)]
    pub class: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Recorded step the rollout starts from.
    #[arg(long)]
    pub start: Option<usize>,
    /// First clip frame of the conditioning window.
    #[arg(long, default_value_t = 0)]
    pub window_start: usize,
    #[arg(long)]
    pub window_n: Option<usize>,
    /// Output trajectory file holding the predicted frames.
    #[arg(long)]
    pub out: PathBuf,
    /// Dump a PPM frame every k predicted steps.
    #[arg(long)]
    pub frames_every: Option<usize>,
    /// Directory for frame dumps; defaults to `<out>.frames`.
    #[arg(long)]
    pub frames_dir: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

pub fn rollout(a: RolloutArgs) -> CliResult<()> {
    let resolved = resolve_with(
        &a.common,
        vec![
            ("eval.rollout_steps", flag(a.steps)),
            ("eval.rollout_start", flag(a.start)),
            ("eval.window_n", flag(a.window_n)),
        ],
    )?;
    announce("rollout", &resolved);
    let cfg = &resolved.config.eval;
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let models = &ckpt.models;
    let traj = Trajectory::load(&a.traj)?;
    let (encoding, clip_frames) = match (models.mode(), &a.video, &a.class) {
        (Mode::Vdgns, Some(path), None) => {
            let clip = VideoClip::load(path)?;
            let end = a.window_start + cfg.window_n;
            if end > clip.frames.len() {
                return Err(CliError::Usage(format!(
                    "window {}..{end} exceeds the clip's {} frames",
                    a.window_start,
                    clip.frames.len()
                )));
            }
            let frames = &clip.frames[a.window_start..end];
            (models.encoding(frames, traj.class())?, Some(clip.frames.len()))
        }
        (Mode::Baseline, None, Some(class)) => (models.encoding(&[], parse_class(class)?)?, None),
        (Mode::Vdgns, _, _) => {
            return Err(CliError::Usage("a vdgns checkpoint is conditioned with --video, not --class".into()));
        }
        (Mode::Baseline, _, _) => {
            return Err(CliError::Usage("a baseline checkpoint is conditioned with --class, not --video".into()));
        }
    };
    if cfg.rollout_start < vdgns::graph::HISTORY || cfg.rollout_start >= traj.steps() {
        return Err(CliError::Usage(format!(
            "start step {} outside the trajectory's {} frames",
            cfg.rollout_start,
            traj.steps()
        )));
    }
    let history = finite_difference_velocities(&traj, cfg.rollout_start)?;
    let frames = gns::rollout(
        &models.gns,
        &models.stats,
        traj.frame(cfg.rollout_start),
        &history,
        &encoding,
        cfg.rollout_steps,
    )?;
    let predicted: Vec<_> = frames[1..].iter().flatten().copied().collect();
    let out_traj = Trajectory::new(traj.material, traj.num_particles, predicted, traj.seed)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    out_traj.save(&a.out)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(k) = a.frames_every {
        if k == 0 {
            return Err(CliError::Usage("--frames-every must be positive".into()));
        }
        let dir = a.frames_dir.clone().unwrap_or_else(|| a.out.with_extension("frames"));
        let bg = BackgroundSet::builtin();
        for step in (k..=cfg.rollout_steps).step_by(k) {
            let path = dir.join(format!("frame_{step:05}.ppm"));
            render_frame(&frames[step], &DUMP_STYLE, &bg).save_ppm(&path)?;
            outputs.push(path);
        }
    }
    eprintln!(
        "predicted {} steps from step {} ({} particles{})",
        cfg.rollout_steps,
        cfg.rollout_start,
        traj.num_particles,
        clip_frames.map(|n| format!(", clip of {n} frames")).unwrap_or_default()
    );
    let dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
    log::append(&dir, "rollout", &resolved, &outputs)?;
    Ok(())
}

/// Checkpoint plus dataset arguments shared by the report subcommands.
#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Manifest file or dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Report directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub window_n: Option<usize>,
    /// Evaluate every k-th usable step.
    #[arg(long)]
    pub stride: Option<usize>,
}

impl ReportArgs {
    fn flags(&self) -> Vec<(&'static str, Option<Value>)> {
        vec![
            ("eval.seed", flag(self.seed)),
            ("eval.window_n", flag(self.window_n)),
            ("eval.step_stride", flag(self.stride)),
        ]
    }
}

fn one_step_options(r: &Resolved) -> OneStepOptions {
    OneStepOptions {
        window_n: r.config.eval.window_n,
        step_stride: r.config.eval.step_stride,
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub report: ReportArgs,
    /// Rollout horizon; capped by the recorded frames.
    #[arg(long)]
    pub rollout_steps: Option<usize>,
    /// Skip the rollout curves.
    #[arg(long)]
    pub no_rollout: bool,
    #[command(flatten)]
    pub common: Common,
}

pub fn eval(a: EvalArgs) -> CliResult<()> {
    let mut flags = a.report.flags();
    flags.push(("eval.rollout_steps", flag(a.rollout_steps)));
    let resolved = resolve_with(&a.common, flags)?;
    announce("eval", &resolved);
    let ckpt = Checkpoint::load(&a.report.ckpt)?;
    let model = &ckpt.models;
    let data = TrainingData::from_manifest(&load_manifest(&a.report.data)?, model.mode() == Mode::Vdgns)?;
    let mut rng = ChaCha8Rng::seed_from_u64(resolved.config.eval.seed);
    let out = &a.report.out;
    let mut outputs = Vec::new();

    let rows = eval::one_step_mse(model, &data, one_step_options(&resolved), &mut rng)?;
    for r in &rows {
        eprintln!("{:>8}  mse {:.4e}  std {:.4e}", r.label, r.mse, r.std);
    }
    write_text(&out.join("one_step_mse.csv"), &eval::mse_csv("class", &rows), &mut outputs)?;
    if !a.no_rollout {
        let report = eval::rollout_error_curves(model, &data, resolved.config.eval.rollout_steps, resolved.config.eval.window_n, &mut rng)?;
        write_text(&out.join("rollout.csv"), &eval::rollout_csv(&report), &mut outputs)?;
        write_json(&out.join("rollout.json"), &report, &mut outputs)?;
    }
    log::append(out, "eval", &resolved, &outputs)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub report: ReportArgs,
    #[arg(long)]
    pub probe_states: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

pub fn analyze(a: AnalyzeArgs) -> CliResult<()> {
    let mut flags = a.report.flags();
    flags.push(("eval.probe_states", flag(a.probe_states)));
    let resolved = resolve_with(&a.common, flags)?;
    announce("analyze", &resolved);
    let cfg = &resolved.config.eval;
    let ckpt = Checkpoint::load(&a.report.ckpt)?;
    let model = &ckpt.models;
    let data = TrainingData::from_manifest(&load_manifest(&a.report.data)?, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let out = &a.report.out;
    let mut outputs = Vec::new();

    let by_class = eval::clip_encodings(model, &data, cfg.window_n, &mut rng)?;
    let mut enc_csv = String::from("class,trajectory_id,p0,p1,p2,p3\n");
    for (c, (kind, encs)) in data.classes.iter().zip(&by_class) {
        for (clip, e) in c.clips.iter().zip(encs) {
            enc_csv.push_str(&format!("{kind},{},{:e},{:e},{:e},{:e}\n", clip.trajectory_id, e[0], e[1], e[2], e[3]));
        }
    }
    write_text(&out.join("encodings.csv"), &enc_csv, &mut outputs)?;

    let separation = eval::class_separation(&by_class)?;
    write_text(&out.join("encoding_variance.csv"), &eval::variance_csv(&separation), &mut outputs)?;
    write_text(&out.join("separation.csv"), &eval::separation_csv(&separation), &mut outputs)?;
    write_json(&out.join("separation.json"), &separation, &mut outputs)?;

    let pca = eval::pca_2d(&by_class)?;
    write_json(&out.join("pca.json"), &pca, &mut outputs)?;
    let mut contours = BTreeMap::new();
    for (kind, pts) in &pca.projected {
        contours.insert(kind.to_string(), eval::kde_contour(pts, eval::KDE_PERCENTILE, eval::KDE_GRID)?);
    }
    write_json(&out.join("kde.json"), &contours, &mut outputs)?;

    let states = eval::probe_states(&data, cfg.probe_states, &mut rng)?;
    let interp = eval::interpolation_r2(model, &states, &separation.means)?;
    write_text(&out.join("interpolation_r2.csv"), &eval::interpolation_csv(&interp), &mut outputs)?;
    write_json(&out.join("interpolation_r2.json"), &interp, &mut outputs)?;

    let separated = separation.pairs.iter().filter(|p| p.separated).count();
    eprintln!("{} encodings; {separated}/{} class pairs separated", by_class.iter().map(|(_, e)| e.len()).sum::<usize>(), separation.pairs.len());
    log::append(out, "analyze", &resolved, &outputs)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub report: ReportArgs,
    /// Main dataset manifest; reports the 45 degree MSE relative to its sand class.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

pub fn sweep(a: SweepArgs) -> CliResult<()> {
    let resolved = resolve_with(&a.common, a.report.flags())?;
    announce("sweep", &resolved);
    let ckpt = Checkpoint::load(&a.report.ckpt)?;
    let model = &ckpt.models;
    let vdgns = model.mode() == Mode::Vdgns;
    let manifest = load_manifest(&a.report.data)?;
    let mut entries = Vec::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        if e.class != MaterialKind::Sand {
            return Err(CliError::Usage(format!("sweep dataset entry {i} is {}, not sand", e.class)));
        }
        let clip = match (&e.clip, vdgns) {
            (Some(rel), true) => Some(VideoClip::load(&manifest.resolve(rel))?),
            (None, true) => return Err(vdgns::Error::Dataset(format!("sweep entry {i} has no clip")).into()),
            _ => None,
        };
        entries.push(SweepEntry {
            friction_deg: e.friction_deg,
            trajectory: manifest.load_trajectory(i)?,
            clip,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(resolved.config.eval.seed);
    let opts = one_step_options(&resolved);
    let rows = eval::friction_sweep_eval(model, &entries, opts, &mut rng)?;
    let out = &a.report.out;
    let mut outputs = Vec::new();
    write_text(&out.join("sweep_mse.csv"), &eval::mse_csv("friction_deg", &rows), &mut outputs)?;

    if let Some(main) = &a.compare {
        let data = TrainingData::from_manifest(&load_manifest(main)?, vdgns)?;
        let main_rows = eval::one_step_mse(model, &data, opts, &mut rng)?;
        let sand = main_rows
            .iter()
            .find(|r| r.label == MaterialKind::Sand.name())
            .ok_or_else(|| vdgns::Error::Dataset("comparison dataset has no sand class".into()))?;
        let steepest = rows.last().expect("sweep has rows");
        let ratio = steepest.mse / sand.mse;
        let doc = json!({
            "sand_mse": sand.mse,
            "steepest_angle_deg": steepest.label,
            "steepest_mse": steepest.mse,
            "ratio": ratio,
            "within_2x": ratio <= 2.0 && ratio >= 0.5,
        });
        write_json(&out.join("sweep_compare.json"), &doc, &mut outputs)?;
        eprintln!("MSE at {} deg is {ratio:.3}x the sand class", steepest.label);
    }
    log::append(out, "sweep", &resolved, &outputs)?;
    Ok(())
}
