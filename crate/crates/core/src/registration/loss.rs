use super::diffusion::diffusion_reg;
use super::lncc::{lncc, DEFAULT_WINDOW};
use super::warp::warp;
use crate::autodiff::{Tape, Var};
use crate::error::{contract, Result};
use crate::tensor::{Element, Tensor};

/// `-lncc(fixed, moving ∘ φ) + lambda * diffusion(u)`.
pub fn total_loss<T: Element>(
    tape: &Tape<T>,
    fixed: &Var<T>,
    moving: &Var<T>,
    u: &Var<T>,
    lambda: f64,
) -> Result<Var<T>> {
    if !(lambda >= 0.0) {
        return Err(contract("total_loss", format!("lambda must be >= 0, got {lambda}")));
    }
    let warped = warp(tape, moving, u)?;
    let sim = lncc(tape, fixed, &warped, DEFAULT_WINDOW)?;
    let neg_sim = tape.scale(&sim, -T::one());
    if lambda == 0.0 {
        return Ok(neg_sim);
    }
    let reg = diffusion_reg(tape, u)?;
    tape.add(&neg_sim, &tape.scale(&reg, T::from_f64(lambda)))
}

/// Value of [`total_loss`] without recording anything.
pub fn total_loss_value<T: Element>(fixed: &Tensor<T>, moving: &Tensor<T>, u: &Tensor<T>, lambda: f64) -> Result<f64> {
    let tape = Tape::new();
    tape.no_grad(|| {
        let l = total_loss(
            &tape,
            &tape.constant(fixed.clone()),
            &tape.constant(moving.clone()),
            &tape.constant(u.clone()),
            lambda,
        )?;
        Ok(l.value().item().as_f64())
    })
}
