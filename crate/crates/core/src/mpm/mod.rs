//! Ground-truth particle simulation.

mod material;
mod math;
mod sim;
mod trajectory;

pub use material::{constants, MaterialKind, MaterialSpec};
pub use math::{Mat2, Vec2};
pub use sim::{
    fill_circle, init_scene, sample_circle, Circle, ParticleSystem, SimConfig, Simulator, BOUNDARY_CELLS, OUTPUT_DT,
    TRAJECTORY_STEPS,
};
pub use trajectory::{generate_trajectory, simulate, Trajectory};
