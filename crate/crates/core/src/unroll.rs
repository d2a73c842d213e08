//! Weight-tied recurrence `u_{t+1} = u_t + f_θ(I_f, I_m, u_t)` and its
//! backpropagation-through-time objective.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{BoundParams, Tape, Var};
use crate::error::{contract, Error, Result};
use crate::network::{step, UpdateNetwork};
use crate::registration::{total_loss, DisplacementField, Image2D};
use crate::tensor::{Element, Tensor};

/// Per-step weights `w_t` of the intermediate loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightScheme {
    /// `w_t = 0`: only the final state is supervised.
    FinalOnly,
    /// `w_t = 10^((t-1)/(T-1))`.
    Exponential,
}

impl WeightScheme {
    /// Weight of step `t` in `1..=steps`.
    pub fn weight(self, t: usize, steps: usize) -> f64 {
        match self {
            WeightScheme::FinalOnly => 0.0,
            WeightScheme::Exponential if steps <= 1 => 1.0,
            WeightScheme::Exponential => 10f64.powf((t - 1) as f64 / (steps - 1) as f64),
        }
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightScheme::FinalOnly => "final_only",
            WeightScheme::Exponential => "exponential",
        })
    }
}

impl FromStr for WeightScheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "final_only" => Ok(WeightScheme::FinalOnly),
            "exponential" => Ok(WeightScheme::Exponential),
            other => Err(format!("unknown weight scheme {other:?} (final_only|exponential)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnrollConfig {
    pub steps: usize,
    pub weights: WeightScheme,
}

impl Default for UnrollConfig {
    fn default() -> Self {
        UnrollConfig {
            steps: 3,
            weights: WeightScheme::FinalOnly,
        }
    }
}

/// Runs `steps` updates from `u_0 = 0` without recording; returns `[u_0, …, u_steps]`.
pub fn unroll_forward<T: Element>(
    net: &UpdateNetwork<T>,
    fixed: &Image2D<T>,
    moving: &Image2D<T>,
    steps: usize,
) -> Result<Vec<DisplacementField<T>>> {
    let (h, w) = (fixed.height(), fixed.width());
    let tape = Tape::new();
    tape.no_grad(|| {
        let p = net.params.bind_constant(&tape);
        let f = tape.constant(fixed.tensor().clone());
        let m = tape.constant(moving.tensor().clone());
        let mut u = tape.constant(Tensor::zeros(&[1, 2, h, w]));
        let mut out = Vec::with_capacity(steps + 1);
        out.push(DisplacementField::zeros(h, w));
        for t in 1..=steps {
            u = step(&tape, &net.config, &p, &f, &m, &u)?;
            if !u.value().is_finite() {
                return Err(Error::NonFinite {
                    what: "unrolled displacement field",
                    step: t,
                });
            }
            out.push(DisplacementField::from_tensor(u.value().clone())?);
        }
        Ok(out)
    })
}

/// `L(φ_T) + Σ_t w_t L(φ_t)` with every step recorded on `tape`.
pub fn bptt_loss<T: Element>(
    tape: &Tape<T>,
    net: &UpdateNetwork<T>,
    params: &BoundParams<T>,
    fixed: &Var<T>,
    moving: &Var<T>,
    cfg: &UnrollConfig,
    lambda: f64,
) -> Result<Var<T>> {
    if cfg.steps == 0 {
        return Err(contract("bptt_loss", "unroll needs at least one step"));
    }
    let shape = fixed.shape();
    let mut u = tape.constant(Tensor::zeros(&[1, 2, shape[2], shape[3]]));
    let mut total: Option<Var<T>> = None;
    for t in 1..=cfg.steps {
        u = step(tape, &net.config, params, fixed, moving, &u)?;
        let w = cfg.weights.weight(t, cfg.steps);
        if w != 0.0 {
            let term = tape.scale(&total_loss(tape, fixed, moving, &u, lambda)?, T::from_f64(w));
            total = Some(match total {
                Some(acc) => tape.add(&acc, &term)?,
                None => term,
            });
        }
    }
    let last = total_loss(tape, fixed, moving, &u, lambda)?;
    match total {
        Some(acc) => tape.add(&last, &acc),
        None => Ok(last),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_weights_span_one_to_ten() {
        let w: Vec<f64> = (1..=6).map(|t| WeightScheme::Exponential.weight(t, 6)).collect();
        assert!((w[0] - 1.0).abs() < 1e-15);
        assert!((w[1] - 10f64.powf(0.2)).abs() < 1e-12);
        assert!((w[5] - 10.0).abs() < 1e-12);
        assert_eq!(WeightScheme::FinalOnly.weight(3, 6), 0.0);
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in [WeightScheme::FinalOnly, WeightScheme::Exponential] {
            assert_eq!(s.to_string().parse::<WeightScheme>().unwrap(), s);
        }
        assert!("linear".parse::<WeightScheme>().is_err());
    }
}
