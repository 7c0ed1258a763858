//! Multi-operator learning with branch/trunk operator networks.
//!
//! The crate is split by concern:
//!
//! - [`autodiff`]: dense matrices, MLPs with exact reverse-mode gradients,
//!   finite-difference checks, optimizers, and parameter checkpoints.
//! - [`models`]: single-operator branch/trunk networks and the
//!   multi-operator model with one shared branch and per-operator trunks.
//! - [`trainer`]: the alternating trunk/branch training loop, the
//!   single-operator baseline, and the pass-count cost ledger.
//! - [`datagen`]: random initial conditions, periodic pseudo-spectral PDE
//!   solvers, and dataset shards.
//! - [`bench`]: error metrics, experiment orchestration, and result tables.

pub mod autodiff;
pub mod bench;
pub mod datagen;
pub mod models;
pub mod trainer;

mod error;

pub use error::{Error, Result};
