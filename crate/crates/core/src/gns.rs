//! Graph network simulator: encode, process, decode, integrate.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::graph::{build_graph, Encoding, GraphSample, VelocityHistory, DEFAULT_RADIUS, EDGE_DIM, HISTORY, VERTEX_DIM};
use crate::mpm::{Vec2, OUTPUT_DT};
use crate::nn::layers::{bias_name, weight_name};
use crate::nn::{init_mlp, mlp_forward, ParameterSet, RowIndex, Tape, Tensor, Var};

pub const LATENT: usize = 48;
pub const MESSAGE_STEPS: usize = 3;

pub const VERTEX_ENCODER: &str = "gns.vertex_encoder";
pub const EDGE_ENCODER: &str = "gns.edge_encoder";
pub const DECODER: &str = "gns.vertex_decoder";

pub const VERTEX_ENCODER_SIZES: [usize; 3] = [VERTEX_DIM, LATENT, LATENT];
pub const EDGE_ENCODER_SIZES: [usize; 3] = [EDGE_DIM, LATENT, LATENT];
pub const EDGE_PROCESSOR_SIZES: [usize; 3] = [3 * LATENT, LATENT, LATENT];
pub const VERTEX_PROCESSOR_SIZES: [usize; 3] = [2 * LATENT, LATENT, LATENT];
pub const DECODER_SIZES: [usize; 3] = [LATENT, LATENT, 2];

pub fn edge_processor(m: usize) -> String {
    format!("gns.edge_processor_{m}")
}

pub fn vertex_processor(m: usize) -> String {
    format!("gns.vertex_processor_{m}")
}

/// Adds every GNS parameter (processors unshared across steps).
pub fn init_gns<R: Rng + ?Sized>(params: &mut ParameterSet, rng: &mut R) {
    init_mlp(params, VERTEX_ENCODER, &VERTEX_ENCODER_SIZES, rng);
    init_mlp(params, EDGE_ENCODER, &EDGE_ENCODER_SIZES, rng);
    for m in 0..MESSAGE_STEPS {
        init_mlp(params, &edge_processor(m), &EDGE_PROCESSOR_SIZES, rng);
        init_mlp(params, &vertex_processor(m), &VERTEX_PROCESSOR_SIZES, rng);
    }
    init_mlp(params, DECODER, &DECODER_SIZES, rng);
}

/// Graph connectivity shared by all latent graphs of one sample.
#[derive(Clone, Debug)]
pub struct Topology {
    pub num_vertices: usize,
    pub senders: RowIndex,
    pub receivers: RowIndex,
}

impl Topology {
    pub fn of(g: &GraphSample) -> Self {
        Topology {
            num_vertices: g.num_vertices(),
            senders: Arc::from(g.senders.as_slice()),
            receivers: Arc::from(g.receivers.as_slice()),
        }
    }
}

/// Vertex and edge latents recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LatentGraph {
    pub vertices: Var,
    pub edges: Var,
}

pub fn encode_graph<'p>(tape: &mut Tape<'p>, params: &'p ParameterSet, vertex_attrs: Var, edge_attrs: Var) -> Result<LatentGraph> {
    Ok(LatentGraph {
        vertices: mlp_forward(tape, params, VERTEX_ENCODER, vertex_attrs, &VERTEX_ENCODER_SIZES)?,
        edges: mlp_forward(tape, params, EDGE_ENCODER, edge_attrs, &EDGE_ENCODER_SIZES)?,
    })
}

/// One message-passing step with residual connections.
///
/// The first edge-processor layer acts on `[e ‖ v_receiver ‖ v_sender]`; its
/// weight is split into three 48-row blocks so vertex terms are multiplied
/// once per vertex and gathered per edge.
pub fn message_pass<'p>(
    tape: &mut Tape<'p>,
    params: &'p ParameterSet,
    lg: LatentGraph,
    topo: &Topology,
    m: usize,
) -> Result<LatentGraph> {
    if m >= MESSAGE_STEPS {
        return Err(Error::Range(format!("message step {m} (expected < {MESSAGE_STEPS})")));
    }
    let ep = edge_processor(m);
    let w0 = tape.param(params, &weight_name(&ep, 0))?;
    let b0 = tape.param(params, &bias_name(&ep, 0))?;
    let w_e = tape.slice_rows(w0, 0, LATENT)?;
    let w_r = tape.slice_rows(w0, LATENT, 2 * LATENT)?;
    let w_s = tape.slice_rows(w0, 2 * LATENT, 3 * LATENT)?;
    let from_e = tape.affine(lg.edges, w_e, b0)?;
    let from_r = tape.matmul(lg.vertices, w_r)?;
    let from_s = tape.matmul(lg.vertices, w_s)?;
    let pre = tape.add_gathered(from_e, &[(from_r, topo.receivers.clone()), (from_s, topo.senders.clone())])?;
    let hidden = tape.tanh(pre);
    let w1 = tape.param(params, &weight_name(&ep, 1))?;
    let b1 = tape.param(params, &bias_name(&ep, 1))?;
    let messages = tape.affine(hidden, w1, b1)?;

    let aggregate = tape.scatter_add_rows(messages, topo.receivers.clone(), topo.num_vertices)?;
    let vin = tape.concat_cols(&[lg.vertices, aggregate])?;
    let vout = mlp_forward(tape, params, &vertex_processor(m), vin, &VERTEX_PROCESSOR_SIZES)?;
    Ok(LatentGraph {
        vertices: tape.add(lg.vertices, vout)?,
        edges: tape.add(lg.edges, messages)?,
    })
}

/// Per-vertex accelerations in normalized units.
pub fn decode_accelerations<'p>(tape: &mut Tape<'p>, params: &'p ParameterSet, lg: LatentGraph) -> Result<Var> {
    mlp_forward(tape, params, DECODER, lg.vertices, &DECODER_SIZES)
}

/// Full encode → process → decode pass.
pub fn gns_forward<'p>(
    tape: &mut Tape<'p>,
    params: &'p ParameterSet,
    vertex_attrs: Var,
    edge_attrs: Var,
    topo: &Topology,
) -> Result<Var> {
    let mut lg = encode_graph(tape, params, vertex_attrs, edge_attrs)?;
    for m in 0..MESSAGE_STEPS {
        lg = message_pass(tape, params, lg, topo, m)?;
    }
    decode_accelerations(tape, params, lg)
}

/// `v' = v + a·dt`, then `x' = x + v'·dt`.
pub fn semi_implicit_euler(x: &[Vec2], v: &[Vec2], a: &[Vec2], dt: f64) -> (Vec<Vec2>, Vec<Vec2>) {
    let vn: Vec<Vec2> = v.iter().zip(a).map(|(v, a)| [v[0] + a[0] * dt, v[1] + a[1] * dt]).collect();
    let xn = x.iter().zip(&vn).map(|(x, v)| [x[0] + v[0] * dt, x[1] + v[1] * dt]).collect();
    (xn, vn)
}

/// Per-axis standardisation of accelerations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl Default for NormStats {
    fn default() -> Self {
        NormStats::IDENTITY
    }
}

impl NormStats {
    pub const IDENTITY: NormStats = NormStats {
        mean: [0.0; 2],
        std: [1.0; 2],
    };

    /// Mean and population standard deviation per axis; a zero spread maps to 1.
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a Vec2>) -> Result<Self> {
        let (mut n, mut s, mut ss) = (0usize, [0.0; 2], [0.0; 2]);
        let all: Vec<Vec2> = samples.into_iter().copied().collect();
        for a in &all {
            n += 1;
            for d in 0..2 {
                s[d] += a[d];
            }
        }
        if n == 0 {
            return Err(Error::Dataset("no accelerations to normalise".into()));
        }
        let mean = s.map(|v| v / n as f64);
        for a in &all {
            for d in 0..2 {
                ss[d] += (a[d] - mean[d]).powi(2);
            }
        }
        let std = std::array::from_fn(|d| {
            let sd = (ss[d] / n as f64).sqrt();
            if sd > 0.0 && sd.is_finite() {
                sd
            } else {
                1.0
            }
        });
        Ok(NormStats { mean, std })
    }

    pub fn normalize(&self, a: Vec2) -> Vec2 {
        std::array::from_fn(|d| (a[d] - self.mean[d]) / self.std[d])
    }

    pub fn denormalize(&self, a: Vec2) -> Vec2 {
        std::array::from_fn(|d| a[d] * self.std[d] + self.mean[d])
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        w.f64s(&self.mean);
        w.f64s(&self.std);
    }

    pub(crate) fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let m = r.f64s(2)?;
        let s = r.f64s(2)?;
        Ok(NormStats {
            mean: [m[0], m[1]],
            std: [s[0], s[1]],
        })
    }
}

/// Raw-unit accelerations for one graph, without recording gradients.
pub fn predict_accelerations(params: &ParameterSet, stats: &NormStats, g: &GraphSample) -> Result<Vec<Vec2>> {
    let mut tape = Tape::new();
    let v = tape.constant(g.vertex_attrs.clone());
    let e = tape.constant(g.edge_attrs.clone());
    let out = gns_forward(&mut tape, params, v, e, &Topology::of(g))?;
    let t = tape.value(out);
    Ok((0..t.rows()).map(|i| stats.denormalize([t.get(i, 0), t.get(i, 1)])).collect())
}

/// Result of one learned simulation step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepPrediction {
    pub accelerations: Vec<Vec2>,
    pub positions: Vec<Vec2>,
    pub history: Vec<VelocityHistory>,
}

/// Advances a state with the given accelerations; the new history entry is
/// `(x' − x) / dt`.
pub fn advance(positions: &[Vec2], history: &[VelocityHistory], accelerations: Vec<Vec2>) -> StepPrediction {
    let v: Vec<Vec2> = history.iter().map(|h| h[0]).collect();
    let (xn, _) = semi_implicit_euler(positions, &v, &accelerations, OUTPUT_DT);
    let history = positions
        .iter()
        .zip(&xn)
        .zip(history)
        .map(|((x, xn), h)| {
            let newest = [(xn[0] - x[0]) / OUTPUT_DT, (xn[1] - x[1]) / OUTPUT_DT];
            let mut out = [newest; HISTORY];
            out[1..].copy_from_slice(&h[..HISTORY - 1]);
            out
        })
        .collect();
    StepPrediction {
        accelerations,
        positions: xn,
        history,
    }
}

/// Builds the graph (no noise), predicts accelerations and integrates.
pub fn predict_step(
    params: &ParameterSet,
    stats: &NormStats,
    positions: &[Vec2],
    history: &[VelocityHistory],
    encoding: &Encoding,
) -> Result<StepPrediction> {
    let g = build_graph(positions, history, encoding, DEFAULT_RADIUS)?;
    let a = predict_accelerations(params, stats, &g)?;
    Ok(advance(positions, history, a))
}

/// Clamps positions into the unit square and zeroes the newest velocity on
/// every clamped axis.
pub fn clamp_to_domain(step: &mut StepPrediction) {
    for (x, h) in step.positions.iter_mut().zip(&mut step.history) {
        for d in 0..2 {
            let c = x[d].clamp(0.0, 1.0);
            if c != x[d] {
                x[d] = c;
                h[0][d] = 0.0;
            }
        }
    }
}

/// Autoregressive rollout; frame 0 is the initial state, so `steps + 1`
/// frames are returned.
pub fn rollout_with<F>(positions: &[Vec2], history: &[VelocityHistory], steps: usize, mut accel: F) -> Result<Vec<Vec<Vec2>>>
where
    F: FnMut(usize, &[Vec2], &[VelocityHistory]) -> Result<Vec<Vec2>>,
{
    let mut frames = vec![positions.to_vec()];
    let mut x = positions.to_vec();
    let mut h = history.to_vec();
    for k in 0..steps {
        let a = accel(k, &x, &h)?;
        let mut step = advance(&x, &h, a);
        if !step.positions.iter().chain(step.history.iter().map(|h| &h[0])).all(|p| p[0].is_finite() && p[1].is_finite()) {
            return Err(Error::RolloutDiverged { step: k + 1 });
        }
        clamp_to_domain(&mut step);
        frames.push(step.positions.clone());
        x = step.positions;
        h = step.history;
    }
    Ok(frames)
}

pub fn rollout(
    params: &ParameterSet,
    stats: &NormStats,
    positions: &[Vec2],
    history: &[VelocityHistory],
    encoding: &Encoding,
    steps: usize,
) -> Result<Vec<Vec<Vec2>>> {
    rollout_with(positions, history, steps, |_, x, h| {
        let g = build_graph(x, h, encoding, DEFAULT_RADIUS)?;
        predict_accelerations(params, stats, &g)
    })
}

/// Convenience: a GNS-only parameter set.
pub fn new_gns_params<R: Rng + ?Sized>(rng: &mut R) -> ParameterSet {
    let mut p = ParameterSet::new();
    init_gns(&mut p, rng);
    p
}

/// Row-stacks per-vertex accelerations into an `N × 2` tensor.
pub fn accel_tensor(a: &[Vec2]) -> Tensor {
    Tensor::from_vec(a.len(), 2, a.iter().flat_map(|v| *v).collect()).expect("shape")
}
