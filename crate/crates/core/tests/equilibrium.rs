use equireg::autodiff::{ParameterSet, Tape, Var};
use equireg::deq::toys::{projected_loss, random_projection, unrolled_gradient, ScalarAffineMap, TinyConvMap};
use equireg::deq::{
    deq_loss, deq_register, fixed_point_solve, ift_gradient_exact, iterate_fixed_point, phantom_gradient,
    phantom_sequence, DeqLossConfig, FixedPointMap, PhantomConfig, RegistrationMap, SolverConfig, SolverMethod,
};
use equireg::network::{FinalLayerInit, NetworkConfig, UpdateNetwork};
use equireg::registration::{total_loss, Image2D};
use equireg::{Error, Result, Tensor};

fn tight() -> SolverConfig {
    SolverConfig {
        max_steps: 500,
        rel_tol: 1e-13,
        method: SolverMethod::Plain,
        anderson_memory: 5,
    }
}

fn identity_loss(_: &Tape<f64>, x: &Var<f64>) -> Result<Var<f64>> {
    Ok(x.clone())
}

fn flat(p: &ParameterSet<f64>) -> Tensor<f64> {
    let v = p.flatten();
    Tensor::new(vec![v.len()], v).unwrap()
}

#[test]
fn scalar_ift_is_four() {
    let params = ScalarAffineMap::params::<f64>(0.5);
    let sol = fixed_point_solve(&ScalarAffineMap, &params, Tensor::scalar(0.0), &tight()).unwrap();
    assert!((sol.state.item() - 2.0).abs() < 1e-12);
    let g = ift_gradient_exact(&ScalarAffineMap, &params, &sol.state, &Tensor::scalar(1.0)).unwrap();
    assert!((g.get("theta").unwrap().item() - 4.0).abs() < 1e-10);
}

#[test]
fn singular_system_reports_sigma() {
    // θ = 1 makes 1 − ∂g/∂x vanish.
    let params = ScalarAffineMap::params::<f64>(1.0);
    let err = ift_gradient_exact(&ScalarAffineMap, &params, &Tensor::scalar(2.0), &Tensor::scalar(1.0)).unwrap_err();
    assert!(matches!(err, Error::Singular { sigma_min } if sigma_min == 0.0), "{err}");
}

#[test]
fn phantom_scalar_limits() {
    let params = ScalarAffineMap::params::<f64>(0.5);
    let star = Tensor::scalar(2.0);
    let one = PhantomConfig { damping: 1.0, steps: 1 };
    let (value, g) = phantom_gradient(&ScalarAffineMap, &params, &star, &one, identity_loss).unwrap();
    assert_eq!(value, 2.0);
    assert!((g.get("theta").unwrap().item() - 2.0).abs() < 1e-12);
    let long = PhantomConfig { damping: 0.5, steps: 50 };
    let (_, g) = phantom_gradient(&ScalarAffineMap, &params, &star, &long, identity_loss).unwrap();
    assert!((g.get("theta").unwrap().item() - 4.0).abs() / 4.0 < 1e-3);
}

#[test]
fn phantom_sequence_shape_and_stationarity() {
    let params = ScalarAffineMap::params::<f64>(0.5);
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let k1 = phantom_sequence(&tape, &ScalarAffineMap, &bound, &Tensor::scalar(2.0), &PhantomConfig { damping: 0.5, steps: 1 }).unwrap();
    assert_eq!(k1.len(), 1);
    let seq = phantom_sequence(&tape, &ScalarAffineMap, &bound, &Tensor::scalar(2.0), &PhantomConfig { damping: 0.5, steps: 6 }).unwrap();
    assert_eq!(seq.len(), 6);
    assert!(seq.iter().all(|v| v.value().item() == 2.0));
}

#[test]
fn zero_gradient_when_parameter_unused() {
    let mut params = ScalarAffineMap::params::<f64>(0.5);
    params.insert("unused", Tensor::scalar(3.0)).unwrap();
    let g = ift_gradient_exact(&ScalarAffineMap, &params, &Tensor::scalar(2.0), &Tensor::scalar(1.0)).unwrap();
    assert_eq!(g.get("unused").unwrap().item(), 0.0);
}

#[test]
fn ift_matches_long_unroll_on_tiny_nets() {
    for seed in 0..20 {
        let (map, params) = TinyConvMap::<f64>::random(seed, 0.6);
        let sol = fixed_point_solve(&map, &params, Tensor::zeros(&map.state_shape()), &tight()).unwrap();
        assert!(sol.report.converged);
        let c = random_projection(seed, &map.state_shape());
        let n = c.numel() as f64;
        let exact = ift_gradient_exact(&map, &params, &sol.state, &c.map(|v| v / n)).unwrap();
        let unrolled = unrolled_gradient(&map, &params, &c, 200).unwrap();
        let err = flat(&exact).rel_error(&flat(&unrolled));
        assert!(err < 1e-3, "seed {seed}: {err}");
    }
}

#[test]
fn phantom_error_shrinks_with_k() {
    let ks = [1usize, 2, 5, 10, 25, 50];
    let mut mean = vec![0.0; ks.len()];
    for seed in 0..20 {
        let (map, params) = TinyConvMap::<f64>::random(seed, 0.6);
        let sol = fixed_point_solve(&map, &params, Tensor::zeros(&map.state_shape()), &tight()).unwrap();
        let c = random_projection(seed, &map.state_shape());
        let n = c.numel() as f64;
        let exact = flat(&ift_gradient_exact(&map, &params, &sol.state, &c.map(|v| v / n)).unwrap());
        for (i, &k) in ks.iter().enumerate() {
            let cfg = PhantomConfig { damping: 0.5, steps: k };
            let (_, g) = phantom_gradient(&map, &params, &sol.state, &cfg, projected_loss(c.clone())).unwrap();
            mean[i] += flat(&g).rel_error(&exact) / 20.0;
        }
    }
    for w in mean.windows(2) {
        assert!(w[1] <= w[0], "{mean:?}");
    }
    assert!(mean[5] < 1e-3, "{mean:?}");
}

#[test]
fn affine_harness_anderson_beats_plain() {
    // Upper-triangular, eigenvalues 0.8 and 0.5.
    let a = [[0.8, 0.3], [0.0, 0.5]];
    let b = [1.0, -2.0];
    let g = |x: &Tensor<f64>| {
        let d = x.data();
        Tensor::new(
            vec![2],
            vec![a[0][0] * d[0] + a[0][1] * d[1] + b[0], a[1][0] * d[0] + a[1][1] * d[1] + b[1]],
        )
    };
    // (I − A)⁻¹ b by hand for the upper-triangular A.
    let y = b[1] / (1.0 - a[1][1]);
    let x = (b[0] + a[0][1] * y) / (1.0 - a[0][0]);
    let base = SolverConfig { max_steps: 500, rel_tol: 1e-8, method: SolverMethod::Plain, anderson_memory: 5 };
    let plain = iterate_fixed_point(Tensor::zeros(&[2]), g, &base).unwrap();
    let anderson = iterate_fixed_point(Tensor::zeros(&[2]), g, &SolverConfig { method: SolverMethod::Anderson, ..base }).unwrap();
    for sol in [&plain, &anderson] {
        assert!(sol.report.converged);
        let d = sol.state.data();
        let err = ((d[0] - x).powi(2) + (d[1] - y).powi(2)).sqrt() / (x * x + y * y).sqrt();
        assert!(err < 1e-6, "{err}");
    }
    assert!(anderson.report.steps_used < plain.report.steps_used, "{} vs {}", anderson.report.steps_used, plain.report.steps_used);
}

fn pair() -> (Image2D<f64>, Image2D<f64>) {
    let f = Image2D::new(8, 8, (0..64).map(|i| ((i * 7 % 13) as f64) / 13.0).collect()).unwrap();
    let m = Image2D::new(8, 8, (0..64).map(|i| ((i * 5 % 11) as f64) / 11.0).collect()).unwrap();
    (f, m)
}

#[test]
fn zero_final_layer_converges_immediately() {
    let net = UpdateNetwork::<f64>::new(NetworkConfig::default(), 0, FinalLayerInit::Zero);
    let (f, m) = pair();
    let (u, sol) = deq_register(&net, &f, &m, &SolverConfig::default()).unwrap();
    assert!(sol.report.converged);
    assert_eq!(sol.report.steps_used, 1);
    assert_eq!(u.max_magnitude(), 0.0);
}

#[test]
fn solve_is_deterministic() {
    let net = UpdateNetwork::<f64>::new(NetworkConfig::default(), 4, FinalLayerInit::Random);
    let (f, m) = pair();
    let (a, ra) = deq_register(&net, &f, &m, &SolverConfig::default()).unwrap();
    let (b, rb) = deq_register(&net, &f, &m, &SolverConfig::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra.report, rb.report);
}

#[test]
fn deq_loss_is_sum_of_parts() {
    let net = UpdateNetwork::<f64>::new(NetworkConfig::default(), 5, FinalLayerInit::Random);
    let (f, m) = pair();
    let map = RegistrationMap::new(net.config, &f, &m);
    let cfg = DeqLossConfig { solver: SolverConfig { max_steps: 12, ..Default::default() }, ..Default::default() };
    let loss = |t: &Tape<f64>, u: &Var<f64>| total_loss(t, map.fixed(), map.moving(), u, 0.1);
    let tape = Tape::new();
    let bound = net.params.bind(&tape);
    let out = deq_loss(&tape, &map, &net.params, &bound, &cfg, loss).unwrap();
    assert_eq!(out.sampled.len(), 3);

    let value = |u: &Tensor<f64>| {
        let t = Tape::new();
        total_loss(&t, map.fixed(), map.moving(), &t.constant(u.clone()), 0.1).unwrap().value().item()
    };
    let mut want = value(&out.solution.state);
    for &i in &out.sampled {
        want += 0.5 * value(&out.solution.trajectory[i]);
    }
    assert!((out.loss.value().item() - want).abs() < 1e-12);

    let only_star = DeqLossConfig { samples: 0, ..cfg };
    let tape = Tape::new();
    let bound = net.params.bind(&tape);
    let out0 = deq_loss(&tape, &map, &net.params, &bound, &only_star, loss).unwrap();
    assert_eq!(out0.loss.value().item(), value(&out0.solution.state));
}
