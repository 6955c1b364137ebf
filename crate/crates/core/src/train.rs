//! Joint training of the video encoder and the GNS with class-matched batching.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{read_file, write_file, Reader, Writer};
use crate::dataset::{Manifest, USABLE_START};
use crate::error::{Error, Result};
use crate::gns::{gns_forward, init_gns, NormStats, Topology};
use crate::graph::{build_graph, finite_difference_velocities, inject_noise, target_acceleration, Encoding, NoiseConfig, VelocityHistory, DEFAULT_RADIUS, ENCODING_DIM, HISTORY, VERTEX_DIM};
use crate::mpm::{MaterialKind, Trajectory, Vec2};
use crate::nn::{adam_step, AdamConfig, AdamState, ParameterSet, Tape, Tensor, Var};
use crate::render::{sample_window_start, Frame, VideoClip};
use crate::video::{encode_pixels, init_video_encoder, one_hot_encoding, stack_windows};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VDCK";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const LOSS_LOG: &str = "loss.csv";
pub const LOSS_LOG_HEADER: &str = "step,loss,seconds";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "final.vdck";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Encoding inferred from video by the jointly trained encoder.
    Vdgns,
    /// Encoding is the one-hot class id.
    Baseline,
}

impl Mode {
    fn id(self) -> u32 {
        match self {
            Mode::Vdgns => 0,
            Mode::Baseline => 1,
        }
    }

    fn from_id(id: u32) -> Option<Self> {
        match id {
            0 => Some(Mode::Vdgns),
            1 => Some(Mode::Baseline),
            _ => None,
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Vdgns => "vdgns",
            Mode::Baseline => "baseline",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_steps: u64,
    pub lr: f64,
    pub seed: u64,
    pub mode: Mode,
    pub noise: NoiseConfig,
    pub window_n: usize,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            total_steps: 20_000,
            lr: 1e-4,
            seed: 0,
            mode: Mode::Vdgns,
            noise: NoiseConfig::default(),
            window_n: 20,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if self.window_n == 0 {
            return Err(Error::Config("window_n must be at least 1".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be at least 1".into()));
        }
        self.noise.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    fn encode(&self, w: &mut Writer) {
        self.encode_identity(w);
        w.u64(self.total_steps);
        w.u64(self.checkpoint_every);
    }

    // Fields that define the run; run length and checkpoint cadence may change on resume.
    fn encode_identity(&self, w: &mut Writer) {
        w.u64(self.batch_size as u64);
        w.f64(self.lr);
        w.u64(self.seed);
        w.u32(self.mode.id());
        w.f64(self.noise.edge_sigma);
        w.f64(self.noise.velocity_sigma);
        w.u32(self.noise.enabled as u32);
        w.u64(self.window_n as u64);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let batch_size = r.u64()? as usize;
        let lr = r.f64()?;
        let seed = r.u64()?;
        let mode_id = r.u32()?;
        let mode = Mode::from_id(mode_id).ok_or_else(|| r.err(format!("unknown mode id {mode_id}")))?;
        let edge_sigma = r.f64()?;
        let velocity_sigma = r.f64()?;
        let enabled = r.u32()? != 0;
        let window_n = r.u64()? as usize;
        let total_steps = r.u64()?;
        let checkpoint_every = r.u64()?;
        Ok(TrainConfig {
            batch_size,
            total_steps,
            lr,
            seed,
            mode,
            noise: NoiseConfig {
                edge_sigma,
                velocity_sigma,
                enabled,
            },
            window_n,
            checkpoint_every,
        })
    }

    /// First 8 bytes of SHA-256 over the run-defining fields.
    pub fn hash(&self) -> u64 {
        let mut w = Writer::new();
        self.encode_identity(&mut w);
        let digest = Sha256::digest(w.finish());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

/// Trajectories and clips of one class.
#[derive(Clone, Debug)]
pub struct ClassData {
    pub kind: MaterialKind,
    /// `(trajectory id, trajectory)`; ids are manifest entry indices.
    pub trajectories: Vec<(usize, Trajectory)>,
    pub clips: Vec<VideoClip>,
}

/// In-memory training set grouped by class.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub classes: Vec<ClassData>,
}

impl TrainingData {
    pub fn new(classes: Vec<ClassData>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Dataset("training data has no classes".into()));
        }
        for c in &classes {
            if c.trajectories.is_empty() {
                return Err(Error::Dataset(format!("class {} has no trajectories", c.kind)));
            }
            if let Some((id, t)) = c.trajectories.iter().find(|(_, t)| t.steps() < USABLE_START + HISTORY + 2) {
                return Err(Error::Dataset(format!("trajectory {id} has only {} steps", t.steps())));
            }
        }
        Ok(TrainingData { classes })
    }

    /// Loads trajectories and, when `with_clips`, every entry's clip.
    pub fn from_manifest(manifest: &Manifest, with_clips: bool) -> Result<Self> {
        let mut classes = Vec::new();
        for (kind, idx) in manifest.by_class() {
            let mut c = ClassData {
                kind,
                trajectories: Vec::new(),
                clips: Vec::new(),
            };
            for i in idx {
                c.trajectories.push((i, manifest.load_trajectory(i)?));
                if with_clips {
                    if let Some(rel) = &manifest.entries[i].clip {
                        let mut clip = VideoClip::load(&manifest.resolve(rel))?;
                        clip.trajectory_id = i as u32;
                        c.clips.push(clip);
                    }
                }
            }
            classes.push(c);
        }
        Self::new(classes)
    }

    fn require_clips(&self) -> Result<usize> {
        let mut frame_len = None;
        for c in &self.classes {
            let first = c
                .clips
                .first()
                .ok_or_else(|| Error::Dataset(format!("class {} has no video clips", c.kind)))?;
            let len = first.frames.first().map_or(0, |f| f.values.len());
            if *frame_len.get_or_insert(len) != len || len == 0 {
                return Err(Error::Dataset("video clips have inconsistent frame sizes".into()));
            }
        }
        Ok(frame_len.unwrap_or(0))
    }

    /// Acceleration statistics over every usable step of every trajectory.
    pub fn acceleration_stats(&self) -> Result<NormStats> {
        let mut all = Vec::new();
        for c in &self.classes {
            for (_, t) in &c.trajectories {
                for step in step_range(t) {
                    all.extend(target_acceleration(t, step)?);
                }
            }
        }
        NormStats::from_samples(all.iter())
    }
}

/// Steps with a full velocity history inside the usable range and a next frame.
pub fn step_range(t: &Trajectory) -> std::ops::Range<usize> {
    USABLE_START + HISTORY..t.steps() - 1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VideoSource {
    Clip {
        class_index: usize,
        clip: usize,
        start: usize,
        len: usize,
    },
    OneHot,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchItem {
    pub class: MaterialKind,
    pub class_index: usize,
    /// Manifest id of the state's trajectory.
    pub trajectory_id: usize,
    /// Manifest id of the clip's trajectory (vdgns mode).
    pub video_trajectory_id: Option<usize>,
    pub t: usize,
    pub positions: Vec<Vec2>,
    pub history: Vec<VelocityHistory>,
    pub target: Vec<Vec2>,
    pub video: VideoSource,
}

/// Draws `cfg.batch_size` items: uniform class, uniform trajectory of that
/// class, uniform step, and (vdgns mode) an independent uniform clip of the
/// same class with a uniform window.
pub fn sample_batch<R: Rng + ?Sized>(data: &TrainingData, rng: &mut R, cfg: &TrainConfig) -> Result<Vec<BatchItem>> {
    if cfg.mode == Mode::Vdgns {
        data.require_clips()?;
    }
    (0..cfg.batch_size)
        .map(|_| {
            let ci = rng.random_range(0..data.classes.len());
            let class = &data.classes[ci];
            let (tid, traj) = &class.trajectories[rng.random_range(0..class.trajectories.len())];
            let t = rng.random_range(step_range(traj));
            let (video, video_trajectory_id) = match cfg.mode {
                Mode::Vdgns => {
                    let k = rng.random_range(0..class.clips.len());
                    let clip = &class.clips[k];
                    let start = sample_window_start(clip.frames.len(), cfg.window_n, rng)?;
                    (
                        VideoSource::Clip {
                            class_index: ci,
                            clip: k,
                            start,
                            len: cfg.window_n,
                        },
                        Some(clip.trajectory_id as usize),
                    )
                }
                Mode::Baseline => (VideoSource::OneHot, None),
            };
            Ok(BatchItem {
                class: class.kind,
                class_index: ci,
                trajectory_id: *tid,
                video_trajectory_id,
                t,
                positions: traj.frame(t).to_vec(),
                history: finite_difference_velocities(traj, t)?,
                target: target_acceleration(traj, t)?,
                video,
            })
        })
        .collect()
}

/// Network weights plus the frozen acceleration statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Models {
    pub gns: ParameterSet,
    /// Absent in baseline mode.
    pub video: Option<ParameterSet>,
    pub stats: NormStats,
}

impl Models {
    pub fn init<R: Rng + ?Sized>(mode: Mode, frame_len: usize, stats: NormStats, rng: &mut R) -> Self {
        let mut gns = ParameterSet::new();
        init_gns(&mut gns, rng);
        let video = (mode == Mode::Vdgns).then(|| {
            let mut p = ParameterSet::new();
            init_video_encoder(&mut p, frame_len, rng);
            p
        });
        Models { gns, video, stats }
    }

    pub fn mode(&self) -> Mode {
        if self.video.is_some() {
            Mode::Vdgns
        } else {
            Mode::Baseline
        }
    }

    /// The encoding for a state: from frames in vdgns mode, from the class
    /// id in baseline mode. Only the input that the mode uses is read.
    pub fn encoding(&self, frames: &[Frame], class: MaterialKind) -> Result<Encoding> {
        match &self.video {
            Some(v) => crate::video::encode_frames(v, frames),
            None => one_hot_encoding(class.id() as usize),
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LossOptions {
    /// Stop gradients at the encoding so the video encoder receives none.
    pub freeze_video: bool,
}

#[derive(Clone, Debug)]
pub struct LossOutput {
    pub loss: f64,
    pub gns_grads: BTreeMap<String, Vec<f64>>,
    pub video_grads: Option<BTreeMap<String, Vec<f64>>>,
}

impl LossOutput {
    pub fn gns_grad_norm(&self) -> f64 {
        grad_norm(&self.gns_grads)
    }

    pub fn video_grad_norm(&self) -> f64 {
        self.video_grads.as_ref().map_or(0.0, grad_norm)
    }
}

fn grad_norm(g: &BTreeMap<String, Vec<f64>>) -> f64 {
    g.values().flatten().map(|x| x * x).sum::<f64>().sqrt()
}

fn add_into(acc: &mut BTreeMap<String, Vec<f64>>, g: BTreeMap<String, Vec<f64>>, scale: f64) {
    for (k, v) in g {
        let slot = acc.entry(k).or_insert_with(|| vec![0.0; v.len()]);
        slot.iter_mut().zip(&v).for_each(|(a, b)| *a += scale * b);
    }
}

fn normalized_target(stats: &NormStats, target: &[Vec2]) -> Tensor {
    Tensor::from_vec(target.len(), 2, target.iter().flat_map(|a| stats.normalize(*a)).collect()).expect("shape")
}

fn velocity_columns(vertex_attrs: &Tensor) -> Tensor {
    let n = vertex_attrs.rows();
    let mut out = Vec::with_capacity(n * 2 * HISTORY);
    for i in 0..n {
        out.extend_from_slice(&vertex_attrs.row(i)[..2 * HISTORY]);
    }
    Tensor::from_vec(n, 2 * HISTORY, out).expect("shape")
}

/// Mean over items of the per-item MSE between normalized predicted and
/// target accelerations, with gradients for both networks.
///
/// Items are processed one at a time to bound memory. In vdgns mode the
/// encoder runs once on the whole batch; each item's GNS backward yields
/// `∂L/∂P_i`, which then seeds the encoder's backward pass.
pub fn compute_loss<R: Rng + ?Sized>(
    models: &Models,
    data: &TrainingData,
    batch: &[BatchItem],
    noise: &NoiseConfig,
    rng: &mut R,
    opts: LossOptions,
) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let b = batch.len();
    let scale = 1.0 / b as f64;

    let mut video_tape = Tape::new();
    let mut encodings: Option<(Var, Tensor)> = None;
    if let Some(vparams) = &models.video {
        let windows = batch
            .iter()
            .map(|it| match it.video {
                VideoSource::Clip {
                    class_index,
                    clip,
                    start,
                    len,
                } => data.classes[class_index].clips[clip]
                    .frames
                    .get(start..start + len)
                    .ok_or_else(|| Error::Range(format!("window {start}..{} outside clip", start + len))),
                VideoSource::OneHot => Err(Error::Contract("vdgns model given a batch without clips".into())),
            })
            .collect::<Result<Vec<&[Frame]>>>()?;
        let x = video_tape.constant(stack_windows(&windows)?);
        let p = encode_pixels(&mut video_tape, vparams, x, b)?;
        let value = video_tape.value(p).clone();
        encodings = Some((p, value));
    }

    let mut loss = 0.0;
    let mut gns_grads = BTreeMap::new();
    let mut d_p = Tensor::zeros(b, ENCODING_DIM);
    for (k, item) in batch.iter().enumerate() {
        let clean = build_graph(&item.positions, &item.history, &[0.0; ENCODING_DIM], DEFAULT_RADIUS)?;
        let g = inject_noise(&clean, noise, rng)?;
        let n = g.num_vertices();
        let topo = Topology::of(&g);
        let mut tape = Tape::new();
        let (vertex_in, p_leaf) = match &encodings {
            Some((_, p)) => {
                let vel = tape.constant(velocity_columns(&g.vertex_attrs));
                let row = Tensor::row_vector(p.row(k));
                let leaf = if opts.freeze_video { tape.constant(row) } else { tape.input(row) };
                let enc = tape.broadcast_rows(leaf, n)?;
                (tape.concat_cols(&[vel, enc])?, Some(leaf))
            }
            None => {
                let mut attrs = g.vertex_attrs.clone();
                let code = one_hot_encoding(item.class.id() as usize)?;
                for i in 0..n {
                    for (c, v) in code.iter().enumerate() {
                        attrs.set(i, 2 * HISTORY + c, *v);
                    }
                }
                debug_assert_eq!(attrs.cols(), VERTEX_DIM);
                (tape.constant(attrs), None)
            }
        };
        let edge_in = tape.constant(g.edge_attrs.clone());
        let out = gns_forward(&mut tape, &models.gns, vertex_in, edge_in, &topo)?;
        let target = tape.constant(normalized_target(&models.stats, &item.target));
        let l = tape.mse(out, target)?;
        loss += scale * tape.value(l).item();
        let grads = tape.backward(l)?;
        if let Some(leaf) = p_leaf.filter(|_| !opts.freeze_video) {
            if let Some(g) = grads.wrt(leaf) {
                for (c, v) in g.iter().enumerate() {
                    d_p.set(k, c, scale * v);
                }
            }
        }
        add_into(&mut gns_grads, grads.into_params(), scale);
    }

    let video_grads = match (&models.video, encodings) {
        (Some(vparams), Some((p, _))) => {
            let g = video_tape.backward_seeded(&[(p, d_p)])?;
            let mut out = g.into_params();
            // Parameters the seed never reached still get explicit zeros.
            for (name, t) in vparams.iter() {
                out.entry(name.to_string()).or_insert_with(|| vec![0.0; t.len()]);
            }
            Some(out)
        }
        _ => None,
    };
    Ok(LossOutput {
        loss,
        gns_grads,
        video_grads,
    })
}

/// Exact position of a ChaCha8 stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Complete training state; restoring it continues a run bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: u64,
    pub models: Models,
    pub gns_adam: AdamState,
    pub video_adam: Option<AdamState>,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        self.config.encode(&mut w);
        w.u64(self.config.hash());
        w.u64(self.step);
        self.models.stats.encode(&mut w);
        self.models.gns.encode(&mut w);
        self.gns_adam.encode(&mut w);
        match (&self.models.video, &self.video_adam) {
            (Some(p), Some(a)) => {
                w.u32(1);
                p.encode(&mut w);
                a.encode(&mut w);
            }
            _ => w.u32(0),
        }
        w.bytes(&self.rng.seed);
        w.u64(self.rng.stream);
        w.u64(self.rng.word_pos as u64);
        w.u64((self.rng.word_pos >> 64) as u64);
        w.finish()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader::new("checkpoint", data);
        r.magic(CHECKPOINT_MAGIC)?;
        r.version(CHECKPOINT_VERSION)?;
        let config = TrainConfig::decode(&mut r)?;
        let at = r.offset();
        let hash = r.u64()?;
        if hash != config.hash() {
            return Err(Error::parse("checkpoint", at, format!("config hash {hash:016x} does not match stored config")));
        }
        let step = r.u64()?;
        let stats = NormStats::decode(&mut r)?;
        let gns = ParameterSet::decode(&mut r)?;
        let gns_adam = AdamState::decode(&mut r)?;
        let at = r.offset();
        let (video, video_adam) = match r.u32()? {
            0 => (None, None),
            1 => (Some(ParameterSet::decode(&mut r)?), Some(AdamState::decode(&mut r)?)),
            v => return Err(Error::parse("checkpoint", at, format!("bad video flag {v}"))),
        };
        if (video.is_some()) != (config.mode == Mode::Vdgns) {
            return Err(Error::parse("checkpoint", at, format!("video encoder presence does not match mode {}", config.mode)));
        }
        let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
        let stream = r.u64()?;
        let lo = r.u64()? as u128;
        let hi = r.u64()? as u128;
        r.finish()?;
        Ok(Checkpoint {
            config,
            step,
            models: Models { gns, video, stats },
            gns_adam,
            video_adam,
            rng: RngState {
                seed,
                stream,
                word_pos: lo | (hi << 64),
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?).map_err(|e| match e {
            Error::Parse { offset, msg, .. } => Error::Parse {
                what: path.display().to_string(),
                offset,
                msg,
            },
            other => other,
        })
    }
}

/// Live training state over borrowed data.
pub struct Trainer<'d> {
    data: &'d TrainingData,
    pub config: TrainConfig,
    pub step: u64,
    pub models: Models,
    gns_adam: AdamState,
    video_adam: Option<AdamState>,
    rng: ChaCha8Rng,
}

impl<'d> Trainer<'d> {
    /// Fresh run: statistics from `data`, weights from `config.seed`.
    pub fn new(data: &'d TrainingData, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let frame_len = match config.mode {
            Mode::Vdgns => data.require_clips()?,
            Mode::Baseline => 0,
        };
        let stats = data.acceleration_stats()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let models = Models::init(config.mode, frame_len, stats, &mut rng);
        Ok(Trainer {
            data,
            config,
            step: 0,
            video_adam: models.video.as_ref().map(|_| AdamState::new()),
            models,
            gns_adam: AdamState::new(),
            rng,
        })
    }

    pub fn from_checkpoint(data: &'d TrainingData, ckpt: Checkpoint) -> Result<Self> {
        ckpt.config.validate()?;
        if ckpt.config.mode == Mode::Vdgns {
            data.require_clips()?;
        }
        Ok(Trainer {
            data,
            config: ckpt.config,
            step: ckpt.step,
            models: ckpt.models,
            gns_adam: ckpt.gns_adam,
            video_adam: ckpt.video_adam,
            rng: ckpt.rng.restore(),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut models = self.models.clone();
        models.gns.clear_grads();
        if let Some(v) = &mut models.video {
            v.clear_grads();
        }
        Checkpoint {
            config: self.config,
            step: self.step,
            models,
            gns_adam: self.gns_adam.clone(),
            video_adam: self.video_adam.clone(),
            rng: RngState::capture(&self.rng),
        }
    }

    /// Sample, differentiate, update. Returns the pre-update batch loss; a
    /// non-finite loss leaves the state untouched.
    pub fn train_step(&mut self) -> Result<f64> {
        let batch = sample_batch(self.data, &mut self.rng, &self.config)?;
        let out = compute_loss(&self.models, self.data, &batch, &self.config.noise, &mut self.rng, LossOptions::default())?;
        if !out.loss.is_finite() {
            return Err(Error::NonFinite(format!("loss {} at step {}", out.loss, self.step + 1)));
        }
        let adam = self.config.adam();
        apply(&mut self.models.gns, &mut self.gns_adam, &out.gns_grads, &adam)?;
        if let (Some(p), Some(a), Some(g)) = (&mut self.models.video, &mut self.video_adam, &out.video_grads) {
            apply(p, a, g, &adam)?;
        }
        self.step += 1;
        Ok(out.loss)
    }
}

fn apply(params: &mut ParameterSet, state: &mut AdamState, grads: &BTreeMap<String, Vec<f64>>, cfg: &AdamConfig) -> Result<()> {
    params.zero_grads();
    params.accumulate(grads)?;
    adam_step(params, state, cfg)
}

pub fn checkpoint_path(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join(CHECKPOINT_DIR).join(format!("step_{step:06}.vdck"))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub checkpoint: Checkpoint,
    /// `(step, loss)` for the steps run in this invocation.
    pub losses: Vec<(u64, f64)>,
}

/// Trains from scratch into `out_dir`: `loss.csv`, periodic checkpoints
/// (including step 0) and `final.vdck`.
pub fn train(data: &TrainingData, config: TrainConfig, out_dir: &Path, on_step: impl FnMut(u64, f64)) -> Result<TrainOutcome> {
    let trainer = Trainer::new(data, config)?;
    let first = checkpoint_path(out_dir, 0);
    trainer.checkpoint().save(&first)?;
    run(trainer, out_dir, false, Some(first), on_step)
}

/// Continues from a checkpoint up to `total_steps` (default: the stored
/// target). Other configuration is taken from the checkpoint.
pub fn resume(
    data: &TrainingData,
    ckpt_path: &Path,
    total_steps: Option<u64>,
    out_dir: &Path,
    on_step: impl FnMut(u64, f64),
) -> Result<TrainOutcome> {
    let mut ckpt = Checkpoint::load(ckpt_path)?;
    if let Some(n) = total_steps {
        ckpt.config.total_steps = n;
    }
    let trainer = Trainer::from_checkpoint(data, ckpt)?;
    run(trainer, out_dir, true, Some(ckpt_path.to_path_buf()), on_step)
}

fn run(
    mut trainer: Trainer<'_>,
    out_dir: &Path,
    append: bool,
    mut last_good: Option<PathBuf>,
    mut on_step: impl FnMut(u64, f64),
) -> Result<TrainOutcome> {
    let log_path = out_dir.join(LOSS_LOG);
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let fresh = !append || !log_path.exists();
    let file = std::fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut log = std::io::BufWriter::new(file);
    if fresh {
        writeln!(log, "{LOSS_LOG_HEADER}").map_err(|e| Error::io(&log_path, e))?;
    }
    let start = Instant::now();
    let mut losses = Vec::new();
    while trainer.step < trainer.config.total_steps {
        let loss = match trainer.train_step() {
            Ok(l) => l,
            Err(Error::NonFinite(_)) => {
                log.flush().map_err(|e| Error::io(&log_path, e))?;
                return Err(Error::TrainingDiverged {
                    step: trainer.step + 1,
                    last_good,
                });
            }
            Err(e) => return Err(e),
        };
        let step = trainer.step;
        writeln!(log, "{step},{loss:e},{:.3}", start.elapsed().as_secs_f64()).map_err(|e| Error::io(&log_path, e))?;
        losses.push((step, loss));
        on_step(step, loss);
        if step % trainer.config.checkpoint_every == 0 {
            log.flush().map_err(|e| Error::io(&log_path, e))?;
            let p = checkpoint_path(out_dir, step);
            trainer.checkpoint().save(&p)?;
            last_good = Some(p);
        }
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    let checkpoint = trainer.checkpoint();
    let final_checkpoint = out_dir.join(FINAL_CHECKPOINT);
    checkpoint.save(&final_checkpoint)?;
    Ok(TrainOutcome {
        final_checkpoint,
        checkpoint,
        losses,
    })
}

/// Single-tape version of one vdgns item: encode `pixels` (one sequence),
/// broadcast `P` into the vertex attributes of `graph`, run the GNS and
/// return the MSE against `target` (normalized). `params` holds both
/// networks. Used for end-to-end gradient checks.
pub fn composite_loss<'p>(
    tape: &mut Tape<'p>,
    params: &'p ParameterSet,
    pixels: &Tensor,
    graph: &crate::graph::GraphSample,
    target: &Tensor,
) -> Result<Var> {
    let x = tape.constant(pixels.clone());
    let p = encode_pixels(tape, params, x, 1)?;
    let enc = tape.broadcast_rows(p, graph.num_vertices())?;
    let vel = tape.constant(velocity_columns(&graph.vertex_attrs));
    let vertex_in = tape.concat_cols(&[vel, enc])?;
    let edge_in = tape.constant(graph.edge_attrs.clone());
    let out = gns_forward(tape, params, vertex_in, edge_in, &Topology::of(graph))?;
    let t = tape.constant(target.clone());
    tape.mse(out, t)
}
