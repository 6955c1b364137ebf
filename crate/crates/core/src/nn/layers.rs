//! Multi-layer perceptrons and the LSTM cell, stored in a [`ParameterSet`].
//!
//! Naming: an MLP under `prefix` owns `prefix.W_i` (fan_in × fan_out) and
//! `prefix.b_i` (1 × fan_out). An LSTM owns `prefix.W_ih`, `prefix.W_hh` and
//! `prefix.b`, gates packed as `[input | forget | candidate | output]`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{ParameterSet, Tape, Tensor, Var};

pub fn weight_name(prefix: &str, layer: usize) -> String {
    format!("{prefix}.W_{layer}")
}

pub fn bias_name(prefix: &str, layer: usize) -> String {
    format!("{prefix}.b_{layer}")
}

fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Tensor {
    let vals = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::from_vec(rows, cols, vals).expect("shape")
}

/// Adds MLP parameters with `U(-1/√fan_in, 1/√fan_in)` weights and biases.
pub fn init_mlp<R: Rng + ?Sized>(params: &mut ParameterSet, prefix: &str, layer_sizes: &[usize], rng: &mut R) {
    for (i, pair) in layer_sizes.windows(2).enumerate() {
        let bound = (1.0 / pair[0] as f64).sqrt();
        params.insert(weight_name(prefix, i), uniform(pair[0], pair[1], bound, rng));
        params.insert(bias_name(prefix, i), uniform(1, pair[1], bound, rng));
    }
}

/// Affine layers with `tanh` between them; the last layer is left linear.
pub fn mlp_forward<'p>(
    tape: &mut Tape<'p>,
    params: &'p ParameterSet,
    prefix: &str,
    x: Var,
    layer_sizes: &[usize],
) -> Result<Var> {
    if layer_sizes.len() < 2 {
        return Err(Error::Contract(format!("mlp `{prefix}` needs at least two layer sizes")));
    }
    let (_, cols) = tape.shape(x);
    if cols != layer_sizes[0] {
        return Err(Error::Shape {
            op: "mlp_forward input",
            lhs: (tape.shape(x).0, layer_sizes[0]),
            rhs: tape.shape(x),
        });
    }
    let layers = layer_sizes.len() - 1;
    let mut h = x;
    for i in 0..layers {
        let w = tape.param(params, &weight_name(prefix, i))?;
        let b = tape.param(params, &bias_name(prefix, i))?;
        h = tape.affine(h, w, b)?;
        if i + 1 < layers {
            h = tape.tanh(h);
        }
    }
    Ok(h)
}

/// Forget-gate bias at initialisation.
pub const FORGET_BIAS_INIT: f64 = 1.0;

pub fn init_lstm<R: Rng + ?Sized>(params: &mut ParameterSet, prefix: &str, input: usize, hidden: usize, rng: &mut R) {
    let bound_ih = (1.0 / input as f64).sqrt();
    let bound_hh = (1.0 / hidden as f64).sqrt();
    params.insert(format!("{prefix}.W_ih"), uniform(input, 4 * hidden, bound_ih, rng));
    params.insert(format!("{prefix}.W_hh"), uniform(hidden, 4 * hidden, bound_hh, rng));
    let mut b = uniform(1, 4 * hidden, bound_hh, rng);
    for j in hidden..2 * hidden {
        b.set(0, j, FORGET_BIAS_INIT);
    }
    params.insert(format!("{prefix}.b"), b);
}

/// One LSTM cell update for a batch of rows; returns `(h, c)`.
pub fn lstm_step<'p>(
    tape: &mut Tape<'p>,
    params: &'p ParameterSet,
    prefix: &str,
    x: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    let w_ih = tape.param(params, &format!("{prefix}.W_ih"))?;
    let w_hh = tape.param(params, &format!("{prefix}.W_hh"))?;
    let b = tape.param(params, &format!("{prefix}.b"))?;
    let hidden = tape.shape(w_hh).0;
    if tape.shape(h_prev).1 != hidden || tape.shape(c_prev) != tape.shape(h_prev) {
        return Err(Error::Shape {
            op: "lstm_step state",
            lhs: tape.shape(h_prev),
            rhs: tape.shape(c_prev),
        });
    }
    if tape.shape(x).0 != tape.shape(h_prev).0 {
        return Err(Error::Shape {
            op: "lstm_step batch",
            lhs: tape.shape(x),
            rhs: tape.shape(h_prev),
        });
    }
    let from_x = tape.affine(x, w_ih, b)?;
    let from_h = tape.matmul(h_prev, w_hh)?;
    let z = tape.add(from_x, from_h)?;
    let zi = tape.slice_cols(z, 0, hidden)?;
    let zf = tape.slice_cols(z, hidden, 2 * hidden)?;
    let zg = tape.slice_cols(z, 2 * hidden, 3 * hidden)?;
    let zo = tape.slice_cols(z, 3 * hidden, 4 * hidden)?;
    let i = tape.sigmoid(zi);
    let f = tape.sigmoid(zf);
    let g = tape.tanh(zg);
    let o = tape.sigmoid(zo);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}
