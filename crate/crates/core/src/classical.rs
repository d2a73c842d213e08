//! Gradient descent on the registration objective with a backtracking step size.

use crate::autodiff::Tape;
use crate::error::{contract, Error, Result};
use crate::registration::{total_loss, total_loss_value, DisplacementField, Image2D};
use crate::tensor::{Element, Tensor};

/// Halvings tried before an iteration is declared stalled.
const MAX_HALVINGS: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassicalConfig {
    pub lambda: f64,
    /// Initial and maximum step size, in pixels per unit of per-pixel gradient.
    pub eta0: f64,
    pub max_iters: usize,
    /// Relative loss change below which iteration stops.
    pub tol: f64,
}

impl Default for ClassicalConfig {
    fn default() -> Self {
        ClassicalConfig {
            lambda: 0.1,
            eta0: 1.0,
            max_iters: 200,
            tol: 1e-5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClassicalResult<T: Element> {
    pub field: DisplacementField<T>,
    /// Loss before the first step followed by the loss after every accepted step.
    pub losses: Vec<f64>,
    pub iterations: usize,
    /// Final relative loss change.
    pub last_change: f64,
}

fn loss_and_grad<T: Element>(
    fixed: &Tensor<T>,
    moving: &Tensor<T>,
    u: &Tensor<T>,
    lambda: f64,
) -> Result<(f64, Tensor<T>)> {
    let tape = Tape::new();
    let uv = tape.leaf(u.clone());
    let l = total_loss(&tape, &tape.constant(fixed.clone()), &tape.constant(moving.clone()), &uv, lambda)?;
    let g = tape.backward(&l)?.wrt(&uv);
    Ok((l.value().item().as_f64(), g))
}

/// Registers `moving` to `fixed` starting from `u = 0`.
///
/// The descent direction is the gradient of the pixel-averaged loss multiplied
/// by the pixel count, so a unit step moves each pixel by its own gradient.
/// The step halves until the loss does not increase, then grows by 1.1 up to
/// `eta0` after a decrease.
pub fn classical_register<T: Element>(
    fixed: &Image2D<T>,
    moving: &Image2D<T>,
    cfg: &ClassicalConfig,
) -> Result<ClassicalResult<T>> {
    if !(cfg.eta0 > 0.0) || cfg.max_iters == 0 || cfg.lambda < 0.0 || cfg.tol < 0.0 {
        return Err(contract(
            "classical_register",
            format!("need eta0 > 0, max_iters >= 1, lambda >= 0, tol >= 0; got {cfg:?}"),
        ));
    }
    let (h, w) = (fixed.height(), fixed.width());
    let (f, m) = (fixed.tensor(), moving.tensor());
    let pixels = (h * w) as f64;
    let mut u = Tensor::zeros(&[1, 2, h, w]);
    let (mut loss, mut grad) = loss_and_grad(f, m, &u, cfg.lambda)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite { what: "classical loss", step: 0 });
    }
    let mut losses = vec![loss];
    let mut eta = cfg.eta0;
    let mut iterations = 0;
    let mut last_change = f64::NAN;
    for it in 1..=cfg.max_iters {
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let step = T::from_f64(eta * pixels);
            let cand = u.zip_map(&grad, |a, g| a - step * g)?;
            let l = total_loss_value(f, m, &cand, cfg.lambda)?;
            if !l.is_finite() {
                return Err(Error::NonFinite { what: "classical loss", step: it });
            }
            if l <= loss {
                accepted = Some((cand, l));
                break;
            }
            eta *= 0.5;
        }
        let Some((cand, l)) = accepted else {
            log::debug!("classical descent stalled at iteration {it}");
            break;
        };
        last_change = (l - loss).abs() / loss.abs().max(f64::MIN_POSITIVE);
        if l < loss {
            eta = (eta * 1.1).min(cfg.eta0);
        }
        u = cand;
        losses.push(l);
        iterations = it;
        if last_change < cfg.tol || it == cfg.max_iters {
            break;
        }
        let (l2, g2) = loss_and_grad(f, m, &u, cfg.lambda)?;
        loss = l2;
        grad = g2;
    }
    Ok(ClassicalResult {
        field: DisplacementField::from_tensor(u)?,
        losses,
        iterations,
        last_change,
    })
}
