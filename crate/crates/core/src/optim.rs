//! AdamW with decoupled weight decay.

use crate::autodiff::ParameterSet;
use crate::tensor::Element;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub struct AdamW {
    config: AdamWConfig,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new<T: Element>(config: AdamWConfig, params: &ParameterSet<T>) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        AdamW {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// Applies one update; `grads` must have the same names and shapes as `params`.
    pub fn update<T: Element>(&mut self, params: &mut ParameterSet<T>, grads: &ParameterSet<T>) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step);
        let bc2 = 1.0 - c.beta2.powi(self.step);
        for (k, ((name, p), (gname, g))) in params.iter_mut().zip(grads.iter()).enumerate() {
            debug_assert_eq!(name, gname);
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            for (i, (pv, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gv = gv.as_f64();
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gv;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gv * gv;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let x = pv.as_f64();
                let next = x - c.lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * x);
                *pv = T::from_f64(next);
            }
        }
    }
}
