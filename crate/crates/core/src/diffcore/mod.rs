//! Numerical kernels, the reverse-accumulation tape, optimizers and the
//! finite-difference checker.

pub mod gradcheck;
pub mod kernels;
pub mod optim;
pub mod params;
pub mod tape;

pub use gradcheck::{finite_diff_check, GradCheckOptions, GradCheckReport};
pub use kernels::{linear, logit, sigmoid, weighted_mean_aggregate};
pub use optim::{Optimizer, UpdateRule};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
