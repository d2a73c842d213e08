//! Central finite-difference checks of the reverse-mode rules.
//!
//! Each case builds a small random f64 problem, projects the op output onto a
//! fixed random direction to get a scalar, and compares the tape gradient of
//! every input with `(f(x + h) - f(x - h)) / 2h`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::registration::{diffusion_reg, lncc, total_loss};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// Outcome of one gradient comparison.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub name: &'static str,
    pub rel_error: f64,
}

type Builder = fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>;

struct Case {
    name: &'static str,
    inputs: Vec<Tensor<f64>>,
    build: Builder,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Displacements whose sample points stay inside the grid and at least 0.1 px
/// away from integer coordinates, where bilinear interpolation has kinks.
fn smooth_displacement(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor<f64> {
    let hw = h * w;
    let mut t = Tensor::zeros(&[1, 2, h, w]);
    for y in 0..h {
        for x in 0..w {
            let tx = (x as f64 + rng.gen_range(-2.0..2.0)).clamp(0.1, (w - 1) as f64 - 0.1);
            let ty = (y as f64 + rng.gen_range(-2.0..2.0)).clamp(0.1, (h - 1) as f64 - 0.1);
            let snap = |v: f64| {
                let f = v - v.floor();
                if f < 0.1 {
                    v.floor() + 0.1
                } else if f > 0.9 {
                    v.floor() + 0.9
                } else {
                    v
                }
            };
            t.data_mut()[y * w + x] = snap(tx) - x as f64;
            t.data_mut()[hw + y * w + x] = snap(ty) - y as f64;
        }
    }
    t
}

fn primitive_cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let a44 = |rng: &mut ChaCha8Rng| uniform(rng, &[1, 2, 4, 4], -1.0, 1.0);
    vec![
        Case {
            name: "conv2d",
            inputs: vec![
                uniform(rng, &[2, 2, 5, 5], -1.0, 1.0),
                uniform(rng, &[3, 2, 3, 3], -1.0, 1.0),
                uniform(rng, &[3], -1.0, 1.0),
            ],
            build: |t, v| t.conv2d(&v[0], &v[1], Some(&v[2])),
        },
        Case {
            name: "concat",
            inputs: vec![uniform(rng, &[2, 1, 3, 3], -1.0, 1.0), uniform(rng, &[2, 2, 3, 3], -1.0, 1.0)],
            build: |t, v| t.concat(&[&v[0], &v[1]]),
        },
        Case {
            name: "add",
            inputs: vec![a44(rng), a44(rng)],
            build: |t, v| t.add(&v[0], &v[1]),
        },
        Case {
            name: "sub",
            inputs: vec![a44(rng), a44(rng)],
            build: |t, v| t.sub(&v[0], &v[1]),
        },
        Case {
            name: "mul",
            inputs: vec![a44(rng), a44(rng)],
            build: |t, v| t.mul(&v[0], &v[1]),
        },
        Case {
            name: "tanh",
            inputs: vec![uniform(rng, &[1, 2, 4, 4], -2.0, 2.0)],
            build: |t, v| Ok(t.tanh(&v[0])),
        },
        Case {
            name: "scale",
            inputs: vec![a44(rng)],
            build: |t, v| Ok(t.scale(&v[0], -1.7)),
        },
        Case {
            name: "mean",
            inputs: vec![a44(rng)],
            build: |t, v| Ok(t.mean(&v[0])),
        },
        Case {
            name: "bilinear_sample",
            inputs: vec![uniform(rng, &[1, 2, 6, 6], 0.0, 1.0), smooth_displacement(rng, 6, 6)],
            build: |t, v| t.bilinear_sample(&v[0], &v[1]),
        },
        Case {
            name: "lncc",
            inputs: vec![uniform(rng, &[1, 1, 8, 8], 0.0, 1.0), uniform(rng, &[1, 1, 8, 8], 0.0, 1.0)],
            build: |t, v| lncc(t, &v[0], &v[1], 5),
        },
        Case {
            name: "diffusion_reg",
            inputs: vec![uniform(rng, &[1, 2, 6, 6], -2.0, 2.0)],
            build: |t, v| diffusion_reg(t, &v[0]),
        },
    ]
}

fn composite_case(rng: &mut ChaCha8Rng) -> Case {
    Case {
        name: "total_loss(lncc∘warp + diffusion)",
        inputs: vec![
            uniform(rng, &[1, 1, 8, 8], 0.0, 1.0),
            uniform(rng, &[1, 1, 8, 8], 0.0, 1.0),
            smooth_displacement(rng, 8, 8),
        ],
        build: |t, v| total_loss(t, &v[0], &v[1], &v[2], 0.1),
    }
}

fn evaluate(case: &Case, projection: &Tensor<f64>, inputs: &[Tensor<f64>]) -> Result<f64> {
    let tape = Tape::new();
    tape.no_grad(|| {
        let vars: Vec<_> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = (case.build)(&tape, &vars)?;
        Ok(out
            .value()
            .data()
            .iter()
            .zip(projection.data())
            .map(|(a, b)| a * b)
            .sum())
    })
}

fn run_case(case: &Case, rng: &mut ChaCha8Rng) -> Result<GradReport> {
    let tape = Tape::new();
    let vars: Vec<_> = case.inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = (case.build)(&tape, &vars)?;
    let projection = uniform(rng, out.shape(), -1.0, 1.0);
    let grads = tape.vjp(&out, projection.clone())?;

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (i, var) in vars.iter().enumerate() {
        analytic.extend_from_slice(grads.wrt(var).data());
        let mut inputs = case.inputs.clone();
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            inputs[i].data_mut()[j] = orig + FD_STEP;
            let plus = evaluate(case, &projection, &inputs)?;
            inputs[i].data_mut()[j] = orig - FD_STEP;
            let minus = evaluate(case, &projection, &inputs)?;
            inputs[i].data_mut()[j] = orig;
            numeric.push((plus - minus) / (2.0 * FD_STEP));
        }
    }
    let a = Tensor::new(vec![analytic.len()], analytic)?;
    let n = Tensor::new(vec![numeric.len()], numeric)?;
    Ok(GradReport {
        name: case.name,
        rel_error: a.rel_error(&n),
    })
}

/// One finite-difference comparison per primitive op.
pub fn check_primitives(seed: u64) -> Result<Vec<GradReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    primitive_cases(&mut rng)
        .iter()
        .map(|c| run_case(c, &mut rng))
        .collect()
}

/// Finite-difference comparison of the full registration objective on 8x8 inputs.
pub fn check_composite(seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let case = composite_case(&mut rng);
    run_case(&case, &mut rng)
}
