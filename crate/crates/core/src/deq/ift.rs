use nalgebra::{DMatrix, DVector};

use crate::autodiff::{ParameterSet, Tape};
use crate::error::{contract, Error, Result};
use crate::tensor::{Element, Tensor};

use super::map::FixedPointMap;

/// Largest state handled by dense Jacobian assembly.
pub const MAX_DENSE_STATE: usize = 512;

/// `∂L/∂θ = ∂L/∂u* (I − ∂g/∂u*)⁻¹ ∂g/∂θ` by dense assembly and solve.
///
/// One vector-Jacobian product per state entry builds `∂g/∂u*`; intended as a
/// reference on tiny problems.
pub fn ift_gradient_exact<T: Element, M: FixedPointMap<T>>(
    map: &M,
    params: &ParameterSet<T>,
    u_star: &Tensor<T>,
    loss_grad: &Tensor<T>,
) -> Result<ParameterSet<T>> {
    let n = u_star.numel();
    if n > MAX_DENSE_STATE {
        return Err(contract(
            "ift_gradient_exact",
            format!("state has {n} entries, dense assembly supports at most {MAX_DENSE_STATE}"),
        ));
    }
    if loss_grad.shape() != u_star.shape() {
        return Err(contract(
            "ift_gradient_exact",
            format!("loss gradient {:?} does not match state {:?}", loss_grad.shape(), u_star.shape()),
        ));
    }
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let z = tape.leaf(u_star.clone());
    let gz = map.apply(&tape, &bound, &z)?;

    // Row i of ∂g/∂z is the pullback of the i-th unit cotangent.
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let mut e = Tensor::zeros(gz.shape());
        e.data_mut()[i] = T::one();
        let row = tape.vjp(&gz, e)?.wrt(&z);
        for (j, v) in row.data().iter().enumerate() {
            jac[(i, j)] = v.as_f64();
        }
    }
    let system = DMatrix::<f64>::identity(n, n) - jac;
    let svd = system.transpose().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax.max(1.0)) {
        return Err(Error::Singular { sigma_min: smin });
    }
    let rhs = DVector::from_iterator(n, loss_grad.data().iter().map(|v| v.as_f64()));
    let v = svd
        .solve(&rhs, 0.0)
        .map_err(|e| contract("ift_gradient_exact", e.to_string()))?;
    let cotangent = Tensor::new(gz.shape().to_vec(), v.iter().map(|&x| T::from_f64(x)).collect())?;
    let grads = tape.vjp(&gz, cotangent)?;
    Ok(bound.gradients(&grads))
}
