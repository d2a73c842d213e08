//! Deformable 2D image registration three ways: classical gradient descent,
//! a weight-tied unrolled network trained through time, and an equilibrium
//! network solved to a fixed point and trained with damped phantom gradients.

pub mod autodiff;
pub mod checkpoint;
pub mod classical;
pub mod config;
pub mod corpus;
pub mod deq;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod io;
pub mod memory;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod registration;
pub mod selftest;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod unroll;

pub use error::{Error, Result};
pub use tensor::{DType, Element, Tensor};
