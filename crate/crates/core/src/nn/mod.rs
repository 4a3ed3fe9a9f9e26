//! Dense tensors, a define-by-run reverse-mode tape, and ADAM.

mod adam;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_many, relative_error, GradCheck, FD_STEP, REL_FLOOR};
pub use params::{Param, ParamId, ParamSet};
pub use tape::{cost, Gradients, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
