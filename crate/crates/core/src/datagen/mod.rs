//! Dataset generation: random initial conditions, periodic spectral solves,
//! shard assembly and the mean-of-training-solutions baseline.

pub mod baseline;
pub mod grid;
pub mod ic;
pub mod pde;
pub mod shard;
pub mod spectral;

pub use baseline::{mean_baseline_error, mean_baseline_prediction};
pub use grid::Grid1D;
pub use ic::{sample_ic, InitialCondition, InitialConditionSpec};
pub use pde::{calibrate_dt, solve_pde, solve_pde_with_dt, Equation, PdeSpec};
pub use spectral::{interpolate, FourierInterpolant, Spectral};
pub use shard::{build_shard, equispaced_sensors, DatasetShard, OperatorSpec, QueryMesh, Split};
