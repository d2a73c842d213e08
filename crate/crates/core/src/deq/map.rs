use crate::autodiff::{BoundParams, ParameterSet, Tape, Var};
use crate::error::Result;
use crate::network::{step, NetworkConfig, UpdateNetwork};
use crate::registration::{DisplacementField, Image2D};
use crate::tensor::{Element, Tensor};

use super::solver::{fixed_point_solve, Solution, SolverConfig};

/// A parameterized map whose fixed point defines the model output.
pub trait FixedPointMap<T: Element> {
    fn state_shape(&self) -> Vec<usize>;

    fn apply(&self, tape: &Tape<T>, params: &BoundParams<T>, state: &Var<T>) -> Result<Var<T>>;
}

/// `g_θ(u) = u + f_θ(I_f, I_m, u)` for one image pair.
pub struct RegistrationMap<T: Element> {
    config: NetworkConfig,
    fixed: Var<T>,
    moving: Var<T>,
}

impl<T: Element> RegistrationMap<T> {
    pub fn new(config: NetworkConfig, fixed: &Image2D<T>, moving: &Image2D<T>) -> Self {
        let tape = Tape::new();
        RegistrationMap {
            config,
            fixed: tape.constant(fixed.tensor().clone()),
            moving: tape.constant(moving.tensor().clone()),
        }
    }

    pub fn fixed(&self) -> &Var<T> {
        &self.fixed
    }

    pub fn moving(&self) -> &Var<T> {
        &self.moving
    }
}

impl<T: Element> FixedPointMap<T> for RegistrationMap<T> {
    fn state_shape(&self) -> Vec<usize> {
        let s = self.fixed.shape();
        vec![1, 2, s[2], s[3]]
    }

    fn apply(&self, tape: &Tape<T>, params: &BoundParams<T>, state: &Var<T>) -> Result<Var<T>> {
        step(tape, &self.config, params, &self.fixed, &self.moving, state)
    }
}

/// Solves for the equilibrium field of one pair starting from `u_0 = 0`.
pub fn deq_register<T: Element>(
    net: &UpdateNetwork<T>,
    fixed: &Image2D<T>,
    moving: &Image2D<T>,
    cfg: &SolverConfig,
) -> Result<(DisplacementField<T>, Solution<T>)> {
    let map = RegistrationMap::new(net.config, fixed, moving);
    let sol = solve_from_zero(&map, &net.params, cfg)?;
    Ok((DisplacementField::from_tensor(sol.state.clone())?, sol))
}

pub(super) fn solve_from_zero<T: Element, M: FixedPointMap<T>>(
    map: &M,
    params: &ParameterSet<T>,
    cfg: &SolverConfig,
) -> Result<Solution<T>> {
    fixed_point_solve(map, params, Tensor::zeros(&map.state_shape()), cfg)
}
