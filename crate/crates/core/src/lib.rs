#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod data;
pub mod diffcore;
pub mod downstream;
pub mod error;
pub mod graph;
pub mod model;
pub mod search;
pub mod synth;
pub mod tensor;
pub mod theory;

pub use error::{FivesError, Result};
pub use tensor::Tensor;
