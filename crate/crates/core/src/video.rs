//! Video encoder: per-frame MLP, LSTM over time, affine head to `P`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Encoding, ENCODING_DIM};
use crate::nn::{init_lstm, init_mlp, lstm_step, mlp_forward, ParameterSet, Tape, Tensor, Var};
use crate::render::{Frame, FRAME_LEN};

pub const FRAME_ENCODER: &str = "video.frame_encoder";
pub const LSTM: &str = "video.lstm";
pub const HEAD: &str = "video.head";

pub const FRAME_HIDDEN: [usize; 3] = [512, 128, 128];
pub const LSTM_HIDDEN: usize = 32;
pub const HEAD_SIZES: [usize; 2] = [LSTM_HIDDEN, ENCODING_DIM];
pub const NUM_CLASSES: usize = 4;

/// Layer sizes of the frame MLP for a given flattened frame length.
pub fn frame_encoder_sizes(frame_len: usize) -> [usize; 4] {
    [frame_len, FRAME_HIDDEN[0], FRAME_HIDDEN[1], FRAME_HIDDEN[2]]
}

/// Adds encoder parameters for frames of `frame_len` values (12,288 in
/// production; smaller in unit tests).
pub fn init_video_encoder<R: Rng + ?Sized>(params: &mut ParameterSet, frame_len: usize, rng: &mut R) {
    init_mlp(params, FRAME_ENCODER, &frame_encoder_sizes(frame_len), rng);
    init_lstm(params, LSTM, FRAME_HIDDEN[2], LSTM_HIDDEN, rng);
    init_mlp(params, HEAD, &HEAD_SIZES, rng);
}

pub fn new_video_params<R: Rng + ?Sized>(rng: &mut R) -> ParameterSet {
    let mut p = ParameterSet::new();
    init_video_encoder(&mut p, FRAME_LEN, rng);
    p
}

/// Encodes `batch` sequences at once. `pixels` holds `T·batch` flattened
/// frames, time-major: rows `t·batch .. (t+1)·batch` are step `t`.
/// Returns a `batch × 4` encoding.
pub fn encode_pixels<'p>(tape: &mut Tape<'p>, params: &'p ParameterSet, pixels: Var, batch: usize) -> Result<Var> {
    let (rows, frame_len) = tape.shape(pixels);
    if batch == 0 || rows == 0 {
        return Err(Error::Contract("video encoder needs at least one frame".into()));
    }
    if rows % batch != 0 {
        return Err(Error::Contract(format!("{rows} frame rows do not split into {batch} sequences")));
    }
    let features = mlp_forward(tape, params, FRAME_ENCODER, pixels, &frame_encoder_sizes(frame_len))?;
    let mut h = tape.constant(Tensor::zeros(batch, LSTM_HIDDEN));
    let mut c = tape.constant(Tensor::zeros(batch, LSTM_HIDDEN));
    for t in 0..rows / batch {
        let x = tape.slice_rows(features, t * batch, (t + 1) * batch)?;
        (h, c) = lstm_step(tape, params, LSTM, x, h, c)?;
    }
    mlp_forward(tape, params, HEAD, h, &HEAD_SIZES)
}

/// Stacks equal-length windows time-major for [`encode_pixels`].
pub fn stack_windows(windows: &[&[Frame]]) -> Result<Tensor> {
    let len = windows.first().map_or(0, |w| w.len());
    if len == 0 {
        return Err(Error::Contract("video encoder needs at least one frame".into()));
    }
    if let Some(w) = windows.iter().find(|w| w.len() != len) {
        return Err(Error::Contract(format!("window lengths differ: {} vs {len}", w.len())));
    }
    let frame_len = windows[0][0].values.len();
    let mut values = Vec::with_capacity(len * windows.len() * frame_len);
    for t in 0..len {
        for w in windows {
            let f = &w[t];
            if f.values.len() != frame_len {
                return Err(Error::Shape {
                    op: "stack_windows",
                    lhs: (1, frame_len),
                    rhs: (1, f.values.len()),
                });
            }
            values.extend_from_slice(&f.values);
        }
    }
    Tensor::from_vec(len * windows.len(), frame_len, values)
}

/// `P` for one clip window, without recording gradients.
pub fn encode_frames(params: &ParameterSet, frames: &[Frame]) -> Result<Encoding> {
    let mut tape = Tape::new();
    let x = tape.constant(stack_windows(&[frames])?);
    let p = encode_pixels(&mut tape, params, x, 1)?;
    let v = tape.value(p);
    Ok(std::array::from_fn(|k| v.get(0, k)))
}

/// The baseline's class indicator.
pub fn one_hot_encoding(class_id: usize) -> Result<Encoding> {
    if class_id >= NUM_CLASSES {
        return Err(Error::Range(format!("class id {class_id} (expected < {NUM_CLASSES})")));
    }
    let mut e = [0.0; ENCODING_DIM];
    e[class_id] = 1.0;
    Ok(e)
}

/// Mean over dimensions of the unbiased per-dimension variance.
pub fn encoding_variance(encodings: &[Encoding]) -> Result<f64> {
    let n = encodings.len();
    if n < 2 {
        return Err(Error::Contract(format!("encoding variance needs at least 2 encodings, got {n}")));
    }
    let mut total = 0.0;
    for d in 0..ENCODING_DIM {
        let mean = encodings.iter().map(|e| e[d]).sum::<f64>() / n as f64;
        total += encodings.iter().map(|e| (e[d] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    }
    Ok(total / ENCODING_DIM as f64)
}
