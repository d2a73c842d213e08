//! Training loops for the unrolled and equilibrium models.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParameterSet, Tape};
use crate::deq::{deq_loss, DeqLossConfig, RegistrationMap};
use crate::error::{contract, Error, Result};
use crate::network::{FinalLayerInit, NetworkConfig, UpdateNetwork};
use crate::optim::{AdamW, AdamWConfig};
use crate::registration::{total_loss, Image2D};
use crate::synth::SyntheticPair;
use crate::tensor::Element;
use crate::unroll::{bptt_loss, UnrollConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TrainMode {
    Unroll(UnrollConfig),
    Deq(DeqLossConfig),
}

impl TrainMode {
    pub fn name(&self) -> &'static str {
        match self {
            TrainMode::Unroll(_) => "unroll",
            TrainMode::Deq(_) => "deq",
        }
    }

    /// Step budget the model is trained at.
    pub fn trained_steps(&self) -> usize {
        match self {
            TrainMode::Unroll(c) => c.steps,
            TrainMode::Deq(c) => c.solver.max_steps,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub network: NetworkConfig,
    pub lambda: f64,
    pub optim: AdamWConfig,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
}

impl TrainConfig {
    pub fn unroll() -> Self {
        TrainConfig {
            mode: TrainMode::Unroll(UnrollConfig::default()),
            network: NetworkConfig::default(),
            lambda: 0.1,
            optim: AdamWConfig::default(),
            epochs: 30,
            seed: 0,
            grad_clip: 0.0,
        }
    }

    pub fn deq() -> Self {
        TrainConfig {
            mode: TrainMode::Deq(DeqLossConfig::default()),
            ..TrainConfig::unroll()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Mean similarity-plus-regularizer loss of the model output.
    pub mean_output_loss: f64,
    /// Mean solver evaluations per pair (equilibrium mode).
    pub mean_solver_steps: Option<f64>,
    pub converged_fraction: Option<f64>,
    /// Pairs whose trajectory was shorter than the number of sampled states.
    pub clamped: usize,
    pub seconds: f64,
}

pub const EPOCH_HEADER: &str = "epoch,mean_loss,mean_output_loss,mean_solver_steps,converged_fraction,clamped,seconds";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{:.3}",
            self.epoch,
            self.mean_loss,
            self.mean_output_loss,
            opt(self.mean_solver_steps),
            opt(self.converged_fraction),
            self.clamped,
            self.seconds
        )
    }
}

/// Result of one optimization step on one pair.
#[derive(Clone, Debug)]
pub struct StepOutcome<T: Element> {
    pub loss: f64,
    pub output_loss: f64,
    pub grads: ParameterSet<T>,
    pub solver_steps: Option<usize>,
    pub converged: Option<bool>,
    pub clamped: bool,
    /// Arrays the tape retained for the backward pass.
    pub stored_states: usize,
}

/// Loss and parameter gradients for one pair.
pub fn loss_and_gradients<T: Element>(
    net: &UpdateNetwork<T>,
    fixed: &Image2D<T>,
    moving: &Image2D<T>,
    mode: &TrainMode,
    lambda: f64,
) -> Result<StepOutcome<T>> {
    let tape = Tape::new();
    let bound = net.params.bind(&tape);
    match mode {
        TrainMode::Unroll(cfg) => {
            let f = tape.constant(fixed.tensor().clone());
            let m = tape.constant(moving.tensor().clone());
            let loss = bptt_loss(&tape, net, &bound, &f, &m, cfg, lambda)?;
            let stored_states = tape.stored_state_count();
            let grads = bound.gradients(&tape.backward(&loss)?);
            let value = loss.value().item().as_f64();
            Ok(StepOutcome {
                loss: value,
                output_loss: f64::NAN,
                grads,
                solver_steps: None,
                converged: None,
                clamped: false,
                stored_states,
            })
        }
        TrainMode::Deq(cfg) => {
            let map = RegistrationMap::new(net.config, fixed, moving);
            let out = deq_loss(&tape, &map, &net.params, &bound, cfg, |t, u| {
                total_loss(t, map.fixed(), map.moving(), u, lambda)
            })?;
            let stored_states = tape.stored_state_count();
            let grads = bound.gradients(&tape.backward(&out.loss)?);
            let output_loss = crate::registration::total_loss_value(
                fixed.tensor(),
                moving.tensor(),
                &out.solution.state,
                lambda,
            )?;
            Ok(StepOutcome {
                loss: out.loss.value().item().as_f64(),
                output_loss,
                grads,
                solver_steps: Some(out.solution.report.steps_used),
                converged: Some(out.solution.report.converged),
                clamped: out.clamped,
                stored_states,
            })
        }
    }
}

fn clip<T: Element>(grads: &mut ParameterSet<T>, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads.flatten().iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v = *v * T::from_f64(s));
        }
    }
}

/// A freshly initialized network for `cfg`.
pub fn initial_network<T: Element>(cfg: &TrainConfig) -> UpdateNetwork<T> {
    UpdateNetwork::new(cfg.network, cfg.seed, FinalLayerInit::Zero)
}

/// Trains `net` in place, one AdamW update per pair, pairs shuffled each epoch.
pub fn train<T: Element>(
    net: &mut UpdateNetwork<T>,
    pairs: &[SyntheticPair],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    if pairs.is_empty() {
        return Err(contract("train", "no training pairs"));
    }
    let images: Vec<(Image2D<T>, Image2D<T>)> = pairs.iter().map(|p| (p.fixed.cast(), p.moving.cast())).collect();
    let mut opt = AdamW::new(cfg.optim, &net.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_7a11);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let (mut loss, mut out_loss, mut steps, mut conv, mut clamped) = (0.0, 0.0, 0usize, 0usize, 0usize);
        for &i in &order {
            let (f, m) = &images[i];
            let mut o = loss_and_gradients(net, f, m, &cfg.mode, cfg.lambda)?;
            if !o.loss.is_finite() || !o.grads.is_finite() {
                return Err(Error::NonFinite {
                    what: "training loss or gradient",
                    step: epoch,
                });
            }
            clip(&mut o.grads, cfg.grad_clip);
            opt.update(&mut net.params, &o.grads);
            loss += o.loss;
            out_loss += o.output_loss;
            steps += o.solver_steps.unwrap_or(0);
            conv += o.converged.unwrap_or(false) as usize;
            clamped += o.clamped as usize;
        }
        let n = pairs.len() as f64;
        let deq = matches!(cfg.mode, TrainMode::Deq(_));
        if clamped > 0 {
            log::warn!("epoch {epoch}: {clamped} pairs had fewer solver states than requested samples");
        }
        let log = EpochLog {
            epoch,
            mean_loss: loss / n,
            mean_output_loss: if deq { out_loss / n } else { f64::NAN },
            mean_solver_steps: deq.then(|| steps as f64 / n),
            converged_fraction: deq.then(|| conv as f64 / n),
            clamped,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!("{}", log.csv_row());
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}
