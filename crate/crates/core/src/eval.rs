//! Per-pair evaluation and step-budget sweeps.

use std::fmt::Write as _;

use crate::classical::{classical_register, ClassicalConfig};
use crate::deq::{deq_register, SolverConfig};
use crate::error::{contract, Error, Result};
use crate::metrics::{dice, hausdorff, tre};
use crate::network::UpdateNetwork;
use crate::registration::{jacobian_stats, warp_labels, DisplacementField, JacobianStats};
use crate::synth::SyntheticPair;
use crate::tensor::Element;
use crate::unroll::unroll_forward;

/// Anything that turns a pair into a displacement field.
#[derive(Clone, Copy, Debug)]
pub enum Method<'a, T: Element> {
    /// `u = 0`.
    Identity,
    GroundTruth,
    Classical(ClassicalConfig),
    Unroll(&'a UpdateNetwork<T>),
    Deq(&'a UpdateNetwork<T>, SolverConfig),
}

impl<T: Element> Method<'_, T> {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Identity => "identity",
            Method::GroundTruth => "ground_truth",
            Method::Classical(_) => "classical",
            Method::Unroll(_) => "unroll",
            Method::Deq(..) => "deq",
        }
    }

    pub fn is_iterative(&self) -> bool {
        matches!(self, Method::Classical(_) | Method::Unroll(_) | Method::Deq(..))
    }

    /// Runs the method with `steps` as its iteration budget.
    pub fn infer(&self, pair: &SyntheticPair, steps: usize) -> Result<Inference> {
        if self.is_iterative() && steps == 0 {
            return Err(contract("infer", format!("{} needs at least one step", self.name())));
        }
        let fixed = pair.fixed.cast::<T>();
        let moving = pair.moving.cast::<T>();
        let (h, w) = (fixed.height(), fixed.width());
        Ok(match self {
            Method::Identity => Inference::direct(DisplacementField::zeros(h, w)),
            Method::GroundTruth => Inference::direct(pair.gt_field.clone()),
            Method::Classical(cfg) => {
                let cfg = ClassicalConfig { max_iters: steps, ..*cfg };
                let r = classical_register(&fixed, &moving, &cfg)?;
                Inference {
                    field: r.field.cast(),
                    steps: r.iterations,
                    residual: Some(r.last_change),
                    converged: Some(r.last_change < cfg.tol),
                }
            }
            Method::Unroll(net) => {
                let traj = unroll_forward(net, &fixed, &moving, steps)?;
                let last = traj[steps].tensor();
                let prev = traj[steps - 1].tensor();
                let residual = last.sub(prev)?.norm() / (prev.norm() + 1e-8);
                Inference {
                    field: traj[steps].cast(),
                    steps,
                    residual: Some(residual),
                    converged: None,
                }
            }
            Method::Deq(net, cfg) => {
                let cfg = SolverConfig { max_steps: steps, ..*cfg };
                let (field, sol) = deq_register(net, &fixed, &moving, &cfg)?;
                Inference {
                    field: field.cast(),
                    steps: sol.report.steps_used,
                    residual: Some(sol.report.final_residual()),
                    converged: Some(sol.report.converged),
                }
            }
        })
    }
}

#[derive(Clone, Debug)]
pub struct Inference {
    pub field: DisplacementField<f64>,
    /// Iterations actually performed.
    pub steps: usize,
    pub residual: Option<f64>,
    pub converged: Option<bool>,
}

impl Inference {
    fn direct(field: DisplacementField<f64>) -> Self {
        Inference {
            field,
            steps: 0,
            residual: None,
            converged: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalRecord {
    pub seed: u64,
    /// Step budget requested.
    pub steps: usize,
    pub steps_used: usize,
    pub dice: f64,
    /// Mean over labels of the maximum Hausdorff distance, in pixels.
    pub hd: f64,
    pub tre: f64,
    pub jacobian: JacobianStats,
    pub residual: Option<f64>,
    pub converged: Option<bool>,
    /// Dice and TRE of the unregistered pair.
    pub dice_initial: f64,
    pub tre_initial: f64,
}

/// Overlap, boundary, landmark and Jacobian metrics of one field on one pair.
pub fn field_metrics(pair: &SyntheticPair, field: &DisplacementField<f64>) -> Result<(f64, f64, f64, JacobianStats)> {
    let warped = warp_labels(&pair.labels_moving, field)?;
    let d = dice(&warped, &pair.labels_fixed)?.mean;
    let mut hds = Vec::new();
    for label in pair.labels_fixed.labels() {
        match hausdorff(&warped, &pair.labels_fixed, label) {
            Ok(v) => hds.push(v),
            Err(Error::LabelMissing(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let hd = if hds.is_empty() {
        f64::NAN
    } else {
        hds.iter().sum::<f64>() / hds.len() as f64
    };
    let t = tre(&pair.keypoints_fixed, &pair.keypoints_moving, field)?.mean;
    Ok((d, hd, t, jacobian_stats(field)?))
}

pub fn evaluate_field(pair: &SyntheticPair, inference: Inference, steps: usize) -> Result<EvalRecord> {
    let (dice, hd, tre, jacobian) = field_metrics(pair, &inference.field)?;
    let zero = DisplacementField::zeros(pair.fixed.height(), pair.fixed.width());
    let (dice_initial, _, tre_initial, _) = field_metrics(pair, &zero)?;
    Ok(EvalRecord {
        seed: pair.seed,
        steps,
        steps_used: inference.steps,
        dice,
        hd,
        tre,
        jacobian,
        residual: inference.residual,
        converged: inference.converged,
        dice_initial,
        tre_initial,
    })
}

pub fn evaluate_pair<T: Element>(method: &Method<'_, T>, pair: &SyntheticPair, steps: usize) -> Result<EvalRecord> {
    evaluate_field(pair, method.infer(pair, steps)?, steps)
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub const RECORD_HEADER: &str =
    "seed,steps,steps_used,dice,hd,tre,folded_pct,std_log_jdet,residual,converged,dice_initial,tre_initial";

/// One CSV row per record, with header.
pub fn records_csv(records: &[EvalRecord]) -> String {
    let mut out = format!("{RECORD_HEADER}\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.seed,
            r.steps,
            r.steps_used,
            r.dice,
            r.hd,
            r.tre,
            r.jacobian.folded_percent(),
            r.jacobian.std_log_jdet,
            opt(r.residual),
            opt(r.converged),
            r.dice_initial,
            r.tre_initial
        );
    }
    out
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Stat {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Stat { mean: f64::NAN, std: f64::NAN };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Stat { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub steps: usize,
    pub pairs: usize,
    pub dice: Stat,
    pub hd: Stat,
    pub tre: Stat,
    pub folded_pct: Stat,
    pub std_log_jdet: Stat,
    pub residual: Stat,
    /// Fraction of pairs whose solve converged, when the method reports it.
    pub converged_fraction: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub trained_steps: usize,
    /// Step count with the highest mean Dice (smallest on ties).
    pub best_steps: usize,
    pub records: Vec<EvalRecord>,
}

impl SweepResult {
    pub fn row(&self, steps: usize) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.steps == steps)
    }

    pub fn rows_csv(&self) -> String {
        let mut out = String::from(
            "steps,pairs,dice_mean,dice_std,hd_mean,hd_std,tre_mean,tre_std,folded_pct_mean,folded_pct_std,\
             std_log_jdet_mean,std_log_jdet_std,residual_mean,residual_std,converged_fraction,trained,best\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.steps,
                r.pairs,
                r.dice.mean,
                r.dice.std,
                r.hd.mean,
                r.hd.std,
                r.tre.mean,
                r.tre.std,
                r.folded_pct.mean,
                r.folded_pct.std,
                r.std_log_jdet.mean,
                r.std_log_jdet.std,
                r.residual.mean,
                r.residual.std,
                opt(r.converged_fraction),
                r.steps == self.trained_steps,
                r.steps == self.best_steps
            );
        }
        out
    }
}

fn aggregate(steps: usize, records: &[EvalRecord]) -> SweepRow {
    let conv: Vec<bool> = records.iter().filter_map(|r| r.converged).collect();
    SweepRow {
        steps,
        pairs: records.len(),
        dice: Stat::of(records.iter().map(|r| r.dice)),
        hd: Stat::of(records.iter().map(|r| r.hd)),
        tre: Stat::of(records.iter().map(|r| r.tre)),
        folded_pct: Stat::of(records.iter().map(|r| r.jacobian.folded_percent())),
        std_log_jdet: Stat::of(records.iter().map(|r| r.jacobian.std_log_jdet)),
        residual: Stat::of(records.iter().filter_map(|r| r.residual)),
        converged_fraction: (!conv.is_empty()).then(|| conv.iter().filter(|&&c| c).count() as f64 / conv.len() as f64),
    }
}

pub const DEFAULT_SWEEP_STEPS: [usize; 6] = [3, 6, 12, 24, 48, 96];

/// Evaluates every pair at every step budget.
pub fn convergence_sweep<T: Element>(
    method: &Method<'_, T>,
    pairs: &[SyntheticPair],
    step_counts: &[usize],
    trained_steps: usize,
) -> Result<SweepResult> {
    if step_counts.is_empty() || step_counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(contract(
            "convergence_sweep",
            format!("step counts must be non-empty and strictly increasing, got {step_counts:?}"),
        ));
    }
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for &steps in step_counts {
        let recs = pairs
            .iter()
            .map(|p| evaluate_pair(method, p, steps))
            .collect::<Result<Vec<_>>>()?;
        rows.push(aggregate(steps, &recs));
        records.extend(recs);
    }
    let best_steps = rows
        .iter()
        .fold(None::<&SweepRow>, |best, r| match best {
            Some(b) if b.dice.mean >= r.dice.mean => Some(b),
            _ => Some(r),
        })
        .map(|r| r.steps)
        .expect("non-empty");
    Ok(SweepResult {
        rows,
        trained_steps,
        best_steps,
        records,
    })
}
