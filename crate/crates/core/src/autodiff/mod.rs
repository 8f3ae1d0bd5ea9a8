//! Reverse-mode automatic differentiation over dense 2-D `f64` grids.

mod gradcheck;
mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, REL_ERROR_FLOOR};
pub use tape::{Tape, Tensor, Var};

#[cfg(test)]
pub(crate) use tape::sigmoid;
