//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! Training runs in `f32`; gradient checks instantiate the same code with
//! `f64`. Everything here is single-threaded per pass.

mod gradcheck;
mod kernels;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport, REL_ERR_FLOOR};
pub use params::{Binder, Bindings, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var, PROB_CLAMP};
pub use tensor::{Precision, Real, Tensor};

#[cfg(test)]
mod tests;
