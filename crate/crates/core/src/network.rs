//! The weight-tied update operator shared by the unrolled and equilibrium
//! models: `f(I_f, I_m, u) = alpha * conv3(tanh(conv2(tanh(conv1([I_f, I_m ∘ φ, u])))))`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{BoundParams, ParameterSet, Tape, Var};
use crate::error::{contract, Result};
use crate::registration::{warp, DisplacementField, Image2D};
use crate::tensor::{Element, Tensor};

pub const INPUT_CHANNELS: usize = 4;
pub const OUTPUT_CHANNELS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetworkConfig {
    pub hidden: usize,
    /// Output scale applied after the last convolution.
    pub alpha: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden: 16,
            alpha: 0.1,
        }
    }
}

/// How the last convolution starts out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FinalLayerInit {
    /// All zeros, so the untrained network is the identity update.
    Zero,
    Random,
}

const LAYERS: [&str; 3] = ["conv1", "conv2", "conv3"];

fn weight_name(layer: &str) -> String {
    format!("{layer}.weight")
}

fn bias_name(layer: &str) -> String {
    format!("{layer}.bias")
}

/// Architecture plus the shared parameter set θ.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateNetwork<T: Element> {
    pub config: NetworkConfig,
    pub params: ParameterSet<T>,
}

impl<T: Element> UpdateNetwork<T> {
    /// Uniform `±1/sqrt(fan_in)` initialization from a seeded stream.
    pub fn new(config: NetworkConfig, seed: u64, final_init: FinalLayerInit) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let channels = [INPUT_CHANNELS, config.hidden, config.hidden, OUTPUT_CHANNELS];
        let mut params = ParameterSet::new();
        for (i, layer) in LAYERS.iter().enumerate() {
            let (cin, cout) = (channels[i], channels[i + 1]);
            let bound = 1.0 / ((cin * 9) as f64).sqrt();
            let zero = i == 2 && final_init == FinalLayerInit::Zero;
            let mut draw = |shape: &[usize]| {
                Tensor::from_fn(shape, |_| {
                    if zero {
                        T::zero()
                    } else {
                        T::from_f64(rng.gen_range(-bound..bound))
                    }
                })
            };
            let w = draw(&[cout, cin, 3, 3]);
            let b = draw(&[cout]);
            params.insert(weight_name(layer), w).expect("fresh names");
            params.insert(bias_name(layer), b).expect("fresh names");
        }
        UpdateNetwork { config, params }
    }

    /// Checks that a loaded parameter set fits this architecture.
    pub fn from_params(config: NetworkConfig, params: ParameterSet<T>) -> Result<Self> {
        let channels = [INPUT_CHANNELS, config.hidden, config.hidden, OUTPUT_CHANNELS];
        for (i, layer) in LAYERS.iter().enumerate() {
            let want_w = [channels[i + 1], channels[i], 3, 3];
            let want_b = [channels[i + 1]];
            let ok_w = params.get(&weight_name(layer)).map(|t| t.shape() == want_w);
            let ok_b = params.get(&bias_name(layer)).map(|t| t.shape() == want_b);
            if ok_w != Some(true) || ok_b != Some(true) {
                return Err(contract(
                    "UpdateNetwork::from_params",
                    format!("{layer} missing or not shaped {want_w:?} / {want_b:?}"),
                ));
            }
        }
        if params.len() != 2 * LAYERS.len() {
            return Err(contract("UpdateNetwork::from_params", "unexpected extra parameters"));
        }
        Ok(UpdateNetwork { config, params })
    }

    pub fn cast<U: Element>(&self) -> UpdateNetwork<U> {
        UpdateNetwork {
            config: self.config,
            params: self.params.cast(),
        }
    }

    /// One update `u + f(I_f, I_m, u)` without recording anything.
    pub fn step_value(
        &self,
        fixed: &Image2D<T>,
        moving: &Image2D<T>,
        u: &DisplacementField<T>,
    ) -> Result<DisplacementField<T>> {
        let tape = Tape::new();
        let out = tape.no_grad(|| {
            let p = self.params.bind_constant(&tape);
            step(
                &tape,
                &self.config,
                &p,
                &tape.constant(fixed.tensor().clone()),
                &tape.constant(moving.tensor().clone()),
                &tape.constant(u.tensor().clone()),
            )
        })?;
        DisplacementField::from_tensor(out.value().clone())
    }
}

/// The learned residual update `f_θ(I_f, I_m, u)`.
pub fn residual<T: Element>(
    tape: &Tape<T>,
    config: &NetworkConfig,
    params: &BoundParams<T>,
    fixed: &Var<T>,
    moving: &Var<T>,
    u: &Var<T>,
) -> Result<Var<T>> {
    let warped = warp(tape, moving, u)?;
    let mut h = tape.concat(&[fixed, &warped, u])?;
    for (i, layer) in LAYERS.iter().enumerate() {
        h = tape.conv2d(&h, params.var(&weight_name(layer))?, Some(params.var(&bias_name(layer))?))?;
        if i + 1 < LAYERS.len() {
            h = tape.tanh(&h);
        }
    }
    Ok(tape.scale(&h, T::from_f64(config.alpha)))
}

/// `u + f_θ(I_f, I_m, u)`.
pub fn step<T: Element>(
    tape: &Tape<T>,
    config: &NetworkConfig,
    params: &BoundParams<T>,
    fixed: &Var<T>,
    moving: &Var<T>,
    u: &Var<T>,
) -> Result<Var<T>> {
    let f = residual(tape, config, params, fixed, moving, u)?;
    tape.add(u, &f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images() -> (Image2D<f64>, Image2D<f64>) {
        let f = Image2D::new(8, 8, (0..64).map(|i| ((i * 7 % 13) as f64) / 13.0).collect()).unwrap();
        let m = Image2D::new(8, 8, (0..64).map(|i| ((i * 5 % 11) as f64) / 11.0).collect()).unwrap();
        (f, m)
    }

    #[test]
    fn zero_final_layer_is_identity_step() {
        let net = UpdateNetwork::<f64>::new(NetworkConfig::default(), 3, FinalLayerInit::Zero);
        let (f, m) = images();
        let u = DisplacementField::from_fn(8, 8, |y, x| (0.1 * x as f64, -0.05 * y as f64));
        assert_eq!(net.step_value(&f, &m, &u).unwrap(), u);
    }

    #[test]
    fn zero_alpha_is_identity_step() {
        let cfg = NetworkConfig { alpha: 0.0, ..Default::default() };
        let net = UpdateNetwork::<f64>::new(cfg, 3, FinalLayerInit::Random);
        let (f, m) = images();
        let u = DisplacementField::from_fn(8, 8, |y, x| (0.3, (x + y) as f64 * 0.01));
        assert_eq!(net.step_value(&f, &m, &u).unwrap(), u);
    }

    #[test]
    fn step_is_deterministic() {
        let net = UpdateNetwork::<f64>::new(NetworkConfig::default(), 9, FinalLayerInit::Random);
        let (f, m) = images();
        let u = DisplacementField::zeros(8, 8);
        let a = net.step_value(&f, &m, &u).unwrap();
        let b = net.step_value(&f, &m, &u).unwrap();
        assert_eq!(a, b);
        assert!(a.max_magnitude() > 0.0);
    }

    #[test]
    fn shape_check_on_load() {
        let net = UpdateNetwork::<f64>::new(NetworkConfig::default(), 1, FinalLayerInit::Zero);
        let small = NetworkConfig { hidden: 8, alpha: 0.1 };
        assert!(UpdateNetwork::from_params(small, net.params.clone()).is_err());
        assert!(UpdateNetwork::from_params(net.config, net.params.clone()).is_ok());
    }
}
