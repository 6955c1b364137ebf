//! Dense tensors, a define-by-run tape, MLP/LSTM layers and Adam.

mod adam;
mod gradcheck;
pub mod layers;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport, WorstCoordinate};
pub use layers::{init_lstm, init_mlp, lstm_step, mlp_forward};
pub use params::ParameterSet;
pub use tape::{Gradients, RowIndex, Tape, Var};
pub use tensor::Tensor;

