//! Reverse-mode differentiation over the small closed set of operations the
//! registration pipeline uses.
//!
//! Values are [`Var`]s; every operation is a method on a [`Tape`], which
//! records a node (and the arrays its backward rule needs) whenever recording
//! is enabled and at least one operand is on the tape. The number of retained
//! arrays is tracked exactly by [`Tape::stored_state_count`], which is how the
//! memory cost of the different training schemes is compared.

pub(crate) mod kernels;
mod params;
mod tape;

pub use params::{BoundParams, ParameterSet};
pub use tape::{CustomOp, Gradients, Tape, Var};
