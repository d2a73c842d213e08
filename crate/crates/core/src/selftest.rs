//! Fast built-in checks of gradients, solvers, metrics, I/O and the generator.
//!
//! The heavier oracle routines here are also used by the acceptance suite
//! with larger trial counts.

use std::collections::BTreeMap;

use crate::autodiff::{ParameterSet, Tape, Var};
use crate::checkpoint::ModelKind;
use crate::deq::toys::{projected_loss, random_projection, unrolled_gradient, ScalarAffineMap, TinyConvMap};
use crate::deq::{fixed_point_solve, ift_gradient_exact, phantom_gradient, FixedPointMap, PhantomConfig, SolverConfig, SolverMethod};
use crate::error::Result;
use crate::eval::field_metrics;
use crate::gradcheck::{check_composite, check_primitives};
use crate::io::DtenArray;
use crate::memory::{exact_affine_fit, memory_report, MemoryProbe, MemoryRow};
use crate::metrics::{dice, hausdorff};
use crate::registration::{jacobian_stats, DisplacementField, LabelMap};
use crate::synth::{generate_pair, SynthConfig};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn flat(p: &ParameterSet<f64>) -> Tensor<f64> {
    let v = p.flatten();
    let n = v.len();
    Tensor::new(vec![n], v).expect("flat shape")
}

fn tight_solver() -> SolverConfig {
    SolverConfig {
        max_steps: 500,
        rel_tol: 1e-13,
        method: SolverMethod::Plain,
        anderson_memory: 5,
    }
}

/// Worst relative error per primitive and over the composite loss, for
/// seeds `base..base + trials`.
pub fn gradient_errors(trials: u64, base: u64) -> Result<(BTreeMap<&'static str, f64>, f64)> {
    let mut worst = BTreeMap::new();
    let mut composite = 0.0f64;
    for t in 0..trials {
        for r in check_primitives(base + t)? {
            let e = worst.entry(r.name).or_insert(0.0f64);
            *e = e.max(r.rel_error);
        }
        composite = composite.max(check_composite(base + 50_000 + t)?.rel_error);
    }
    Ok((worst, composite))
}

/// Relative error between the exact IFT gradient and a `steps`-step BPTT
/// gradient on one tiny contractive net per seed.
pub fn ift_agreement(seeds: impl IntoIterator<Item = u64>, steps: usize) -> Result<Vec<f64>> {
    seeds
        .into_iter()
        .map(|seed| {
            let (map, params) = TinyConvMap::<f64>::random(seed, 0.6);
            let sol = fixed_point_solve(&map, &params, Tensor::zeros(&map.state_shape()), &tight_solver())?;
            let c = random_projection::<f64>(seed, &map.state_shape());
            let n = c.numel() as f64;
            let exact = ift_gradient_exact(&map, &params, &sol.state, &c.map(|v| v / n))?;
            let unrolled = unrolled_gradient(&map, &params, &c, steps)?;
            Ok(flat(&exact).rel_error(&flat(&unrolled)))
        })
        .collect()
}

/// Phantom gradient of the scalar toy at `θ`, with loss `x`.
pub fn scalar_phantom(theta: f64, cfg: &PhantomConfig) -> Result<f64> {
    let params = ScalarAffineMap::params::<f64>(theta);
    let star = Tensor::scalar(1.0 / (1.0 - theta));
    let (_, g) = phantom_gradient(&ScalarAffineMap, &params, &star, cfg, |_: &Tape<f64>, x: &Var<f64>| {
        Ok(x.clone())
    })?;
    Ok(g.get("theta").map(|t| t.item()).unwrap_or(f64::NAN))
}

/// Mean relative error of the phantom gradient against the IFT gradient
/// over tiny nets, one entry per `K`.
pub fn phantom_errors(seeds: impl IntoIterator<Item = u64>, ks: &[usize], damping: f64) -> Result<Vec<f64>> {
    let mut sums = vec![0.0; ks.len()];
    let mut count = 0usize;
    for seed in seeds {
        let (map, params) = TinyConvMap::<f64>::random(seed, 0.6);
        let sol = fixed_point_solve(&map, &params, Tensor::zeros(&map.state_shape()), &tight_solver())?;
        let c = random_projection::<f64>(seed, &map.state_shape());
        let n = c.numel() as f64;
        let exact = flat(&ift_gradient_exact(&map, &params, &sol.state, &c.map(|v| v / n))?);
        for (sum, &k) in sums.iter_mut().zip(ks) {
            let cfg = PhantomConfig { damping, steps: k };
            let (_, g) = phantom_gradient(&map, &params, &sol.state, &cfg, projected_loss(c.clone()))?;
            *sum += flat(&g).rel_error(&exact);
        }
        count += 1;
    }
    Ok(sums.into_iter().map(|s| s / count.max(1) as f64).collect())
}

pub struct MemoryContrast {
    pub unroll: Vec<MemoryRow>,
    pub deq: Vec<MemoryRow>,
    pub unroll_fit: Option<(i64, i64)>,
    pub deq_constant: bool,
}

pub fn memory_contrast(unroll_steps: &[usize], deq_budgets: &[usize], probe: &MemoryProbe) -> Result<MemoryContrast> {
    let unroll = memory_report(ModelKind::Unroll, unroll_steps, probe)?;
    let deq = memory_report(ModelKind::Deq, deq_budgets, probe)?;
    let unroll_fit = exact_affine_fit(&unroll);
    let deq_constant = deq.windows(2).all(|w| w[0].stored_states == w[1].stored_states);
    Ok(MemoryContrast {
        unroll,
        deq,
        unroll_fit,
        deq_constant,
    })
}

fn check(name: &'static str, outcome: Result<(bool, String)>) -> CheckResult {
    match outcome {
        Ok((passed, detail)) => CheckResult { name, passed, detail },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn metric_smoke() -> Result<(bool, String)> {
    let a = LabelMap::from_fn(8, 8, |_, x| u8::from(x < 4));
    let b = LabelMap::from_fn(8, 8, |_, x| u8::from(x < 2));
    let d = dice(&a, &b)?.mean;
    let hd = hausdorff(&a, &b, 1)?;
    let j = jacobian_stats(&DisplacementField::<f64>::zeros(8, 8))?;
    let ok = (d - 2.0 * 16.0 / 48.0).abs() < 1e-15 && hd == 2.0 && j.folded_fraction == 0.0 && j.std_log_jdet == 0.0;
    Ok((ok, format!("dice {d:.6} hd {hd} folded {}", j.folded_fraction)))
}

fn dten_round_trip() -> Result<(bool, String)> {
    let t = random_projection::<f32>(7, &[2, 16, 16]);
    let back: Tensor<f32> = DtenArray::decode(&DtenArray::from_tensor(&t)?.encode())?.to_tensor()?;
    let same = t.data().iter().zip(back.data()).all(|(a, b)| a.to_bits() == b.to_bits()) && t.shape() == back.shape();
    Ok((same, format!("{} f32 values", t.numel())))
}

fn generator_consistency() -> Result<(bool, String)> {
    let cfg = SynthConfig::default();
    let mut worst_dice = 1.0f64;
    let mut worst_tre = 0.0f64;
    let mut folded = 0.0f64;
    for seed in 0..3 {
        let pair = generate_pair(seed, &cfg)?;
        let (d, _, t, j) = field_metrics(&pair, &pair.gt_field)?;
        worst_dice = worst_dice.min(d);
        worst_tre = worst_tre.max(t);
        folded = folded.max(j.folded_fraction);
        if generate_pair(seed, &cfg)? != pair {
            return Ok((false, format!("seed {seed} not reproducible")));
        }
    }
    Ok((
        worst_dice > 0.98 && worst_tre < 0.5 && folded == 0.0,
        format!("gt dice >= {worst_dice:.4}, tre <= {worst_tre:.3}, folded {folded}"),
    ))
}

/// Runs every check and returns one result per check.
pub fn run_selftest() -> Vec<CheckResult> {
    vec![
        check("gradients", (|| {
            let (worst, composite) = gradient_errors(10, 1000)?;
            let prim = worst.values().cloned().fold(0.0, f64::max);
            Ok((prim < 1e-6 && composite < 1e-4, format!("primitives {prim:.2e}, composite {composite:.2e}")))
        })()),
        check("ift_vs_unroll", (|| {
            let errs = ift_agreement(0..3, 200)?;
            let worst = errs.iter().cloned().fold(0.0, f64::max);
            Ok((worst < 1e-3, format!("worst rel. error {worst:.2e}")))
        })()),
        check("phantom_scalar", (|| {
            let k1 = scalar_phantom(0.5, &PhantomConfig { damping: 1.0, steps: 1 })?;
            let k50 = scalar_phantom(0.5, &PhantomConfig { damping: 0.5, steps: 50 })?;
            let rel = (k50 - 4.0).abs() / 4.0;
            Ok(((k1 - 2.0).abs() < 1e-12 && rel < 1e-3, format!("K=1 {k1}, K=50 {k50:.6}")))
        })()),
        check("memory", (|| {
            let m = memory_contrast(&[2, 4, 8], &[12, 24], &MemoryProbe::default())?;
            let states: Vec<usize> = m.deq.iter().map(|r| r.stored_states).collect();
            Ok((
                m.unroll_fit.is_some() && m.deq_constant,
                format!("unroll fit {:?}, deq {states:?}", m.unroll_fit),
            ))
        })()),
        check("metrics", metric_smoke()),
        check("dten", dten_round_trip()),
        check("generator", generator_consistency()),
    ]
}
