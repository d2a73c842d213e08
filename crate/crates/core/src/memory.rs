//! Stored-state measurements for the two training regimes.

use crate::checkpoint::ModelKind;
use crate::deq::{DeqLossConfig, PhantomConfig, SolverConfig};
use crate::error::Result;
use crate::network::{FinalLayerInit, NetworkConfig, UpdateNetwork};
use crate::synth::{generate_pair, SynthConfig};
use crate::train::{loss_and_gradients, TrainMode};
use crate::unroll::{UnrollConfig, WeightScheme};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemoryRow {
    /// Unroll steps or solver budget.
    pub steps: usize,
    pub stored_states: usize,
    /// Solver evaluations actually used (equilibrium mode).
    pub solver_steps: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MemoryProbe {
    pub size: usize,
    pub seed: u64,
    pub phantom: PhantomConfig,
    pub samples: usize,
    pub weights: WeightScheme,
}

impl Default for MemoryProbe {
    fn default() -> Self {
        MemoryProbe {
            size: 32,
            seed: 0,
            phantom: PhantomConfig::default(),
            samples: 3,
            weights: WeightScheme::FinalOnly,
        }
    }
}

/// Runs one training step per step count and reports what the tape retained.
///
/// The equilibrium solve is run with a vanishing tolerance so every budget is
/// spent in full.
pub fn memory_report(kind: ModelKind, steps_list: &[usize], probe: &MemoryProbe) -> Result<Vec<MemoryRow>> {
    let pair = generate_pair(
        probe.seed,
        &SynthConfig {
            height: probe.size,
            width: probe.size,
            ..Default::default()
        },
    )?;
    let net = UpdateNetwork::<f32>::new(NetworkConfig::default(), probe.seed, FinalLayerInit::Random);
    let fixed = pair.fixed.cast::<f32>();
    let moving = pair.moving.cast::<f32>();
    let mut rows = Vec::with_capacity(steps_list.len());
    for &steps in steps_list {
        let mode = match kind {
            ModelKind::Unroll => TrainMode::Unroll(UnrollConfig {
                steps,
                weights: probe.weights,
            }),
            ModelKind::Deq => TrainMode::Deq(DeqLossConfig {
                solver: SolverConfig {
                    max_steps: steps,
                    rel_tol: 1e-30,
                    ..Default::default()
                },
                phantom: probe.phantom,
                samples: probe.samples,
                gamma: 0.5,
            }),
        };
        let out = loss_and_gradients(&net, &fixed, &moving, &mode, 0.1)?;
        rows.push(MemoryRow {
            steps,
            stored_states: out.stored_states,
            solver_steps: out.solver_steps,
        });
    }
    Ok(rows)
}

/// Integer `(slope, intercept)` when every row lies exactly on one line.
pub fn exact_affine_fit(rows: &[MemoryRow]) -> Option<(i64, i64)> {
    let [a, b, ..] = rows else { return None };
    let dt = b.steps as i64 - a.steps as i64;
    let ds = b.stored_states as i64 - a.stored_states as i64;
    if dt == 0 || ds % dt != 0 {
        return None;
    }
    let slope = ds / dt;
    let intercept = a.stored_states as i64 - slope * a.steps as i64;
    rows.iter()
        .all(|r| r.stored_states as i64 == slope * r.steps as i64 + intercept)
        .then_some((slope, intercept))
}

pub fn memory_csv(rows: &[MemoryRow]) -> String {
    let mut out = String::from("steps,stored_states,solver_steps\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            r.steps,
            r.stored_states,
            r.solver_steps.map(|s| s.to_string()).unwrap_or_default()
        ));
    }
    out
}
