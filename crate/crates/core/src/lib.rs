pub(crate) mod codec;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gns;
pub mod graph;
pub mod mpm;
pub mod nn;
pub mod render;
pub mod train;
pub mod video;

pub use error::{Error, Result};
