//! Small contractive maps with known or cheaply computable fixed points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{BoundParams, ParameterSet, Tape, Var};
use crate::error::Result;
use crate::tensor::{Element, Tensor};

use super::map::FixedPointMap;

/// `g(x) = θ·x + 1` on a single scalar; parameter `"theta"`.
pub struct ScalarAffineMap;

impl ScalarAffineMap {
    pub fn params<T: Element>(theta: f64) -> ParameterSet<T> {
        let mut p = ParameterSet::new();
        p.insert("theta", Tensor::scalar(T::from_f64(theta))).expect("fresh name");
        p
    }
}

impl<T: Element> FixedPointMap<T> for ScalarAffineMap {
    fn state_shape(&self) -> Vec<usize> {
        vec![1]
    }

    fn apply(&self, tape: &Tape<T>, params: &BoundParams<T>, state: &Var<T>) -> Result<Var<T>> {
        let prod = tape.mul(params.var("theta")?, state)?;
        tape.add(&prod, &tape.constant(Tensor::scalar(T::one())))
    }
}

/// `g(z) = tanh(conv([z, x]))` on a `[1, 2, 4, 4]` state (32 entries).
///
/// The weights acting on `z` are rescaled so that the sum of per-tap
/// Frobenius norms is `contraction`, which bounds the Lipschitz constant of
/// `g` in `z`.
pub struct TinyConvMap<T: Element> {
    input: Tensor<T>,
}

pub const TINY_CHANNELS: usize = 2;
pub const TINY_SIZE: usize = 4;

impl<T: Element> TinyConvMap<T> {
    pub fn random(seed: u64, contraction: f64) -> (Self, ParameterSet<T>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = TINY_CHANNELS;
        let input = Tensor::from_fn(&[1, c, TINY_SIZE, TINY_SIZE], |_| T::from_f64(rng.gen_range(-1.0..1.0)));
        let mut w: Vec<f64> = (0..c * 2 * c * 9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // weight layout [out, in, 3, 3]; inputs 0..c act on the state
        let idx = |o: usize, i: usize, k: usize| (o * 2 * c + i) * 9 + k;
        let tap_norm_sum: f64 = (0..9)
            .map(|k| {
                (0..c)
                    .flat_map(|o| (0..c).map(move |i| (o, i)))
                    .map(|(o, i)| w[idx(o, i, k)].powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum();
        let s = contraction / tap_norm_sum;
        for o in 0..c {
            for i in 0..c {
                for k in 0..9 {
                    w[idx(o, i, k)] *= s;
                }
            }
        }
        let mut params = ParameterSet::new();
        params
            .insert(
                "weight",
                Tensor::new(vec![c, 2 * c, 3, 3], w.into_iter().map(T::from_f64).collect()).expect("shape"),
            )
            .expect("fresh name");
        params
            .insert("bias", Tensor::from_fn(&[c], |_| T::from_f64(rng.gen_range(-0.5..0.5))))
            .expect("fresh name");
        (TinyConvMap { input }, params)
    }
}

impl<T: Element> FixedPointMap<T> for TinyConvMap<T> {
    fn state_shape(&self) -> Vec<usize> {
        vec![1, TINY_CHANNELS, TINY_SIZE, TINY_SIZE]
    }

    fn apply(&self, tape: &Tape<T>, params: &BoundParams<T>, state: &Var<T>) -> Result<Var<T>> {
        let x = tape.constant(self.input.clone());
        let h = tape.concat(&[state, &x])?;
        let c = tape.conv2d(&h, params.var("weight")?, Some(params.var("bias")?))?;
        Ok(tape.tanh(&c))
    }
}

/// `mean(c ⊙ z)`, a linear loss with a dense, known cotangent `c / numel`.
pub fn projected_loss<T: Element>(c: Tensor<T>) -> impl Fn(&Tape<T>, &Var<T>) -> Result<Var<T>> {
    move |tape, z| {
        let prod = tape.mul(&tape.constant(c.clone()), z)?;
        Ok(tape.mean(&prod))
    }
}

pub fn random_projection<T: Element>(seed: u64, shape: &[usize]) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-1.0..1.0)))
}

/// Parameter gradient of `mean(c ⊙ z_N)` where `z_N` is `steps` plain
/// iterations from zero, differentiated through every step.
pub fn unrolled_gradient<T: Element, M: FixedPointMap<T>>(
    map: &M,
    params: &ParameterSet<T>,
    c: &Tensor<T>,
    steps: usize,
) -> Result<ParameterSet<T>> {
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let mut z = tape.constant(Tensor::zeros(&map.state_shape()));
    for _ in 0..steps {
        z = map.apply(&tape, &bound, &z)?;
    }
    let loss = projected_loss(c.clone())(&tape, &z)?;
    Ok(bound.gradients(&tape.backward(&loss)?))
}
