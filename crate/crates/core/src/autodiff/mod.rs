//! Dense matrices and reverse-mode gradients for small MLPs.

pub mod checkpoint;
pub mod gradcheck;
pub mod matrix;
pub mod mlp;
pub mod optim;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use gradcheck::{finite_difference_grad, random_mlp_suite, GradcheckCase};
pub use matrix::Matrix;
pub use mlp::{Activation, MlpGrads, MlpParams};
pub use optim::{optimizer_step, OptimState, OptimizerKind};
