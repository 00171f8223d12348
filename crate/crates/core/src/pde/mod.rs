//! Ground-truth solvers and the trajectory datasets built from them.

pub mod dataset;
pub mod kolmogorov;
pub mod normalize;
pub mod shallow_water;

pub use dataset::{Dataset, SystemKind, Split, Trajectory, generate_dataset};
pub use kolmogorov::{KfState, KolmogorovConfig, SpectralGrid, kf_step, simulate_kf};
pub use normalize::{Normalizer, VarNorm};
pub use shallow_water::{ShallowWaterConfig, SwState, simulate_sw, sw_initial_bump, sw_step};
