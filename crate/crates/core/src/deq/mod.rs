//! Registration as a fixed point `u* = g_θ(u*)` with `g_θ(u) = u + f_θ(u)`.
//!
//! The forward solve runs without recording anything. Gradients come either
//! from a dense implicit-function-theorem solve (small problems only, used as
//! a reference) or from a handful of damped steps launched at the solution.

mod ift;
mod map;
mod phantom;
mod solver;
pub mod toys;

pub use ift::ift_gradient_exact;
pub use map::{deq_register, FixedPointMap, RegistrationMap};
pub use phantom::{
    damped_step, deq_loss, phantom_gradient, phantom_sequence, phantom_state, sample_indices, DeqLoss,
    DeqLossConfig, PhantomConfig,
};
pub use solver::{fixed_point_solve, iterate_fixed_point, Solution, SolverConfig, SolverMethod, SolverReport};
