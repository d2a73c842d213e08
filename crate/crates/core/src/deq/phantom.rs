use crate::autodiff::{BoundParams, ParameterSet, Tape, Var};
use crate::error::{contract, Result};
use crate::tensor::{Element, Tensor};

use super::map::{solve_from_zero, FixedPointMap};
use super::solver::{Solution, SolverConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhantomConfig {
    /// Damping τ in (0, 1].
    pub damping: f64,
    /// Number of damped steps K.
    pub steps: usize,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig { damping: 0.5, steps: 5 }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) || self.steps == 0 {
            return Err(contract(
                "PhantomConfig",
                format!("need 0 < tau <= 1 and K >= 1, got tau={} K={}", self.damping, self.steps),
            ));
        }
        Ok(())
    }
}

/// `τ·g(φ) + (1 − τ)·φ`.
pub fn damped_step<T: Element, M: FixedPointMap<T>>(
    tape: &Tape<T>,
    map: &M,
    params: &BoundParams<T>,
    phi: &Var<T>,
    damping: f64,
) -> Result<Var<T>> {
    let g = map.apply(tape, params, phi)?;
    if damping == 1.0 {
        return Ok(g);
    }
    let a = tape.scale(&g, T::from_f64(damping));
    let b = tape.scale(phi, T::from_f64(1.0 - damping));
    tape.add(&a, &b)
}

/// `[φ^0, …, φ^{K−1}]` with `φ^0 = start` carrying no history.
pub fn phantom_sequence<T: Element, M: FixedPointMap<T>>(
    tape: &Tape<T>,
    map: &M,
    params: &BoundParams<T>,
    start: &Tensor<T>,
    cfg: &PhantomConfig,
) -> Result<Vec<Var<T>>> {
    cfg.validate()?;
    let mut seq = vec![tape.constant(start.clone())];
    for _ in 1..cfg.steps {
        let next = damped_step(tape, map, params, seq.last().expect("non-empty"), cfg.damping)?;
        seq.push(next);
    }
    Ok(seq)
}

/// A state whose value is exactly `start` and whose parameter gradient is the
/// phantom gradient: K damped steps from `start`, with the forward value
/// replaced by `start` through `start + (p − stop_grad(p))`.
pub fn phantom_state<T: Element, M: FixedPointMap<T>>(
    tape: &Tape<T>,
    map: &M,
    params: &BoundParams<T>,
    start: &Tensor<T>,
    cfg: &PhantomConfig,
) -> Result<Var<T>> {
    let seq = phantom_sequence(tape, map, params, start, cfg)?;
    let p = damped_step(tape, map, params, seq.last().expect("non-empty"), cfg.damping)?;
    let delta = tape.sub(&p, &p.detach())?;
    tape.add(&seq[0], &delta)
}

/// Loss value at `u_star` and its phantom gradient with respect to θ.
pub fn phantom_gradient<T: Element, M: FixedPointMap<T>>(
    map: &M,
    params: &ParameterSet<T>,
    u_star: &Tensor<T>,
    cfg: &PhantomConfig,
    loss: impl Fn(&Tape<T>, &Var<T>) -> Result<Var<T>>,
) -> Result<(f64, ParameterSet<T>)> {
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let state = phantom_state(&tape, map, &bound, u_star, cfg)?;
    let l = loss(&tape, &state)?;
    let grads = tape.backward(&l)?;
    Ok((l.value().item().as_f64(), bound.gradients(&grads)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeqLossConfig {
    pub solver: SolverConfig,
    pub phantom: PhantomConfig,
    /// Number S of intermediate states supervised.
    pub samples: usize,
    /// Weight γ of the intermediate terms.
    pub gamma: f64,
}

impl Default for DeqLossConfig {
    fn default() -> Self {
        DeqLossConfig {
            solver: SolverConfig::default(),
            phantom: PhantomConfig::default(),
            samples: 3,
            gamma: 0.5,
        }
    }
}

pub struct DeqLoss<T: Element> {
    pub loss: Var<T>,
    pub solution: Solution<T>,
    /// Trajectory indices of the supervised intermediate states.
    pub sampled: Vec<usize>,
    /// True when fewer than S states were available.
    pub clamped: bool,
}

/// `round(i·N/(S+1))` for `i = 1..=S` over a trajectory `[φ_0 … φ_N]`.
///
/// Returns the indices and whether S had to be reduced to `N + 1`.
pub fn sample_indices(trajectory_len: usize, samples: usize) -> (Vec<usize>, bool) {
    let clamped = samples > trajectory_len;
    let s = samples.min(trajectory_len);
    if s == 0 {
        return (Vec::new(), clamped);
    }
    let n = (trajectory_len - 1) as f64;
    let idx = (1..=s)
        .map(|i| (i as f64 * n / (s + 1) as f64).round() as usize)
        .collect();
    (idx, clamped)
}

/// `L(φ*) + γ·Σ_{t∈S} L(φ_t)` where every term is differentiated through its
/// own phantom steps.
pub fn deq_loss<T: Element, M: FixedPointMap<T>>(
    tape: &Tape<T>,
    map: &M,
    params: &ParameterSet<T>,
    bound: &BoundParams<T>,
    cfg: &DeqLossConfig,
    loss: impl Fn(&Tape<T>, &Var<T>) -> Result<Var<T>>,
) -> Result<DeqLoss<T>> {
    if cfg.samples > 0 && !(cfg.gamma > 0.0) {
        return Err(contract("deq_loss", format!("gamma must be positive, got {}", cfg.gamma)));
    }
    let solution = solve_from_zero(map, params, &cfg.solver)?;
    let (sampled, clamped) = sample_indices(solution.trajectory.len(), cfg.samples);
    if clamped {
        log::debug!(
            "only {} solver states available, supervising {} instead of {}",
            solution.trajectory.len(),
            sampled.len(),
            cfg.samples
        );
    }
    let star = phantom_state(tape, map, bound, &solution.state, &cfg.phantom)?;
    let mut total = loss(tape, &star)?;
    for &i in &sampled {
        let state = phantom_state(tape, map, bound, &solution.trajectory[i], &cfg.phantom)?;
        let term = tape.scale(&loss(tape, &state)?, T::from_f64(cfg.gamma));
        total = tape.add(&total, &term)?;
    }
    Ok(DeqLoss {
        loss: total,
        solution,
        sampled,
        clamped,
    })
}
