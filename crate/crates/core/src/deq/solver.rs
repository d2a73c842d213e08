use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::autodiff::{ParameterSet, Tape};
use crate::error::{contract, Error, Result};
use crate::tensor::{Element, Tensor};

use super::map::FixedPointMap;

const RESIDUAL_EPS: f64 = 1e-8;
/// Mixing is skipped when the residual-difference matrix is worse conditioned than this.
const MAX_CONDITION: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverMethod {
    Plain,
    Anderson,
}

impl fmt::Display for SolverMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverMethod::Plain => "plain",
            SolverMethod::Anderson => "anderson",
        })
    }
}

impl FromStr for SolverMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "plain" => Ok(SolverMethod::Plain),
            "anderson" => Ok(SolverMethod::Anderson),
            other => Err(format!("unknown solver {other:?} (plain|anderson)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub max_steps: usize,
    pub rel_tol: f64,
    pub method: SolverMethod,
    pub anderson_memory: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_steps: 48,
            rel_tol: 1e-3,
            method: SolverMethod::Anderson,
            anderson_memory: 5,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 || !(self.rel_tol > 0.0) || self.anderson_memory == 0 {
            return Err(contract(
                "SolverConfig",
                format!(
                    "need max_steps >= 1, rel_tol > 0, memory >= 1; got {}, {}, {}",
                    self.max_steps, self.rel_tol, self.anderson_memory
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolverReport {
    /// Number of map evaluations.
    pub steps_used: usize,
    /// `‖g(u_t) − u_t‖ / (‖u_t‖ + 1e-8)` per evaluation.
    pub residual_trace: Vec<f64>,
    /// `‖g(u_t) − u_t‖` per evaluation.
    pub update_norms: Vec<f64>,
    pub converged: bool,
    /// Anderson steps replaced by a plain step.
    pub fallbacks: usize,
}

impl SolverReport {
    pub fn final_residual(&self) -> f64 {
        self.residual_trace.last().copied().unwrap_or(f64::NAN)
    }
}

#[derive(Clone, Debug)]
pub struct Solution<T: Element> {
    /// `g` applied to the last evaluated iterate.
    pub state: Tensor<T>,
    pub report: SolverReport,
    /// Every evaluated iterate `[u_0, …, u_N]`; `state` is not included.
    pub trajectory: Vec<Tensor<T>>,
}

fn to_f64<T: Element>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.as_f64()).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct Anderson {
    memory: usize,
    g_hist: VecDeque<Vec<f64>>,
    f_hist: VecDeque<Vec<f64>>,
}

impl Anderson {
    fn new(memory: usize) -> Self {
        Anderson {
            memory,
            g_hist: VecDeque::new(),
            f_hist: VecDeque::new(),
        }
    }

    /// Next iterate from the newest `(g, f)` pair, or `None` when mixing is unusable.
    fn next(&mut self, g: Vec<f64>, f: Vec<f64>) -> Option<Vec<f64>> {
        self.g_hist.push_back(g);
        self.f_hist.push_back(f);
        if self.g_hist.len() > self.memory + 1 {
            self.g_hist.pop_front();
            self.f_hist.pop_front();
        }
        let cols = self.g_hist.len() - 1;
        if cols == 0 {
            return None;
        }
        let n = self.f_hist[0].len();
        let df = DMatrix::from_fn(n, cols, |i, j| self.f_hist[j + 1][i] - self.f_hist[j][i]);
        let svd = df.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smin > 0.0) || !(smax / smin < MAX_CONDITION) {
            self.forget();
            return None;
        }
        let fk = DVector::from_column_slice(&self.f_hist[cols]);
        let gamma = svd.solve(&fk, 0.0).ok()?;
        let gk = &self.g_hist[cols];
        let mut next = gk.clone();
        for j in 0..cols {
            let c = gamma[j];
            for (i, v) in next.iter_mut().enumerate() {
                *v -= c * (self.g_hist[j + 1][i] - self.g_hist[j][i]);
            }
        }
        if next.iter().all(|v| v.is_finite()) {
            Some(next)
        } else {
            self.forget();
            None
        }
    }

    /// Drops everything except the newest pair.
    fn forget(&mut self) {
        while self.g_hist.len() > 1 {
            self.g_hist.pop_front();
            self.f_hist.pop_front();
        }
    }
}

/// Iterates `x ← g(x)` (optionally Anderson-mixed) from `x0`.
///
/// Stops after the first evaluation whose relative residual drops below
/// `rel_tol`, or after `max_steps` evaluations. Running out of budget is not
/// an error; the report says so.
pub fn iterate_fixed_point<T: Element>(
    x0: Tensor<T>,
    mut g: impl FnMut(&Tensor<T>) -> Result<Tensor<T>>,
    cfg: &SolverConfig,
) -> Result<Solution<T>> {
    cfg.validate()?;
    let shape = x0.shape().to_vec();
    let mut anderson = (cfg.method == SolverMethod::Anderson).then(|| Anderson::new(cfg.anderson_memory));
    let mut report = SolverReport::default();
    let mut trajectory = Vec::new();
    let mut x = x0;
    for t in 0..cfg.max_steps {
        let gx = g(&x)?;
        if !gx.is_finite() {
            return Err(Error::NonFinite {
                what: "fixed-point iterate",
                step: t + 1,
            });
        }
        let xv = to_f64(&x);
        let gv = to_f64(&gx);
        let fv: Vec<f64> = gv.iter().zip(&xv).map(|(a, b)| a - b).collect();
        let update = norm(&fv);
        let residual = update / (norm(&xv) + RESIDUAL_EPS);
        report.update_norms.push(update);
        report.residual_trace.push(residual);
        report.steps_used = t + 1;
        trajectory.push(x);
        if residual < cfg.rel_tol || t + 1 == cfg.max_steps {
            report.converged = residual < cfg.rel_tol;
            return Ok(Solution {
                state: gx,
                report,
                trajectory,
            });
        }
        x = match anderson.as_mut().map(|a| a.next(gv, fv)) {
            Some(Some(mixed)) => Tensor::new(shape.clone(), mixed.into_iter().map(T::from_f64).collect())?,
            Some(None) => {
                if report.steps_used > 1 {
                    report.fallbacks += 1;
                }
                gx
            }
            None => gx,
        };
    }
    unreachable!("max_steps >= 1 is validated")
}

/// Solves `u = g_θ(u)` for a parameterized map without recording a graph.
pub fn fixed_point_solve<T: Element, M: FixedPointMap<T>>(
    map: &M,
    params: &ParameterSet<T>,
    x0: Tensor<T>,
    cfg: &SolverConfig,
) -> Result<Solution<T>> {
    let tape = Tape::new();
    tape.no_grad(|| {
        let bound = params.bind_constant(&tape);
        iterate_fixed_point(
            x0,
            |x| Ok(map.apply(&tape, &bound, &tape.constant(x.clone()))?.value().clone()),
            cfg,
        )
    })
}
