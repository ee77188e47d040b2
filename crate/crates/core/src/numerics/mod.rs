//! Dense `f64` tensors, a define-by-run autodiff tape, and a
//! finite-difference gradient checker.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, ParamCheck};
pub use params::{ParamId, ParamStore};
pub use tape::{matmul, AttnMask, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
