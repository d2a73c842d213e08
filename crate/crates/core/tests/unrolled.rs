use equireg::autodiff::Tape;
use equireg::network::{FinalLayerInit, NetworkConfig, UpdateNetwork};
use equireg::registration::{total_loss_value, Image2D};
use equireg::unroll::{bptt_loss, unroll_forward, UnrollConfig, WeightScheme};
use equireg::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn smooth_pair(seed: u64, n: usize) -> (Image2D<f64>, Image2D<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b, c): (f64, f64, f64) = (rng.gen_range(0.3..0.9), rng.gen_range(0.3..0.9), rng.gen_range(0.0..3.0));
    let img = |shift: f64| {
        Image2D::new(
            n,
            n,
            (0..n * n)
                .map(|i| {
                    let (y, x) = ((i / n) as f64, (i % n) as f64 + shift);
                    0.5 + 0.3 * (a * x + c).sin() * (b * y).cos()
                })
                .collect(),
        )
        .unwrap()
    };
    (img(0.0), img(0.6))
}

fn loss_value(net: &UpdateNetwork<f64>, f: &Image2D<f64>, m: &Image2D<f64>, cfg: &UnrollConfig) -> f64 {
    let tape = Tape::new();
    tape.no_grad(|| {
        let p = net.params.bind_constant(&tape);
        let l = bptt_loss(
            &tape,
            net,
            &p,
            &tape.constant(f.tensor().clone()),
            &tape.constant(m.tensor().clone()),
            cfg,
            0.1,
        )
        .unwrap();
        l.value().item()
    })
}

#[test]
fn bptt_gradient_matches_finite_differences() {
    let cfg = UnrollConfig { steps: 2, weights: WeightScheme::Exponential };
    let net_cfg = NetworkConfig { hidden: 4, alpha: 0.5 };
    for seed in 0..3 {
        let net = UpdateNetwork::<f64>::new(net_cfg, seed, FinalLayerInit::Random);
        let (f, m) = smooth_pair(seed, 8);
        let tape = Tape::new();
        let p = net.params.bind(&tape);
        let l = bptt_loss(&tape, &net, &p, &tape.constant(f.tensor().clone()), &tape.constant(m.tensor().clone()), &cfg, 0.1).unwrap();
        let grads = p.gradients(&tape.backward(&l).unwrap());
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for name in net.params.names().map(str::to_owned).collect::<Vec<_>>() {
            let count = net.params.get(&name).unwrap().numel();
            for j in 0..count {
                let mut plus = net.clone();
                plus.params.get_mut(&name).unwrap().data_mut()[j] += 1e-5;
                let mut minus = net.clone();
                minus.params.get_mut(&name).unwrap().data_mut()[j] -= 1e-5;
                numeric.push((loss_value(&plus, &f, &m, &cfg) - loss_value(&minus, &f, &m, &cfg)) / 2e-5);
                analytic.push(grads.get(&name).unwrap().data()[j]);
            }
        }
        let a = Tensor::new(vec![analytic.len()], analytic).unwrap();
        let n = Tensor::new(vec![numeric.len()], numeric).unwrap();
        let err = a.rel_error(&n);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn final_only_single_step_is_total_loss_of_one_step() {
    let net = UpdateNetwork::<f64>::new(NetworkConfig::default(), 2, FinalLayerInit::Random);
    let (f, m) = smooth_pair(7, 8);
    let cfg = UnrollConfig { steps: 1, weights: WeightScheme::FinalOnly };
    let u1 = net.step_value(&f, &m, &equireg::registration::DisplacementField::zeros(8, 8)).unwrap();
    let want = total_loss_value(f.tensor(), m.tensor(), u1.tensor(), 0.1).unwrap();
    assert_eq!(loss_value(&net, &f, &m, &cfg), want);
}

#[test]
fn exponential_weights_sum_per_step_losses() {
    let net = UpdateNetwork::<f64>::new(NetworkConfig::default(), 3, FinalLayerInit::Random);
    let (f, m) = smooth_pair(8, 8);
    let cfg = UnrollConfig { steps: 6, weights: WeightScheme::Exponential };
    let traj = unroll_forward(&net, &f, &m, 6).unwrap();
    let per_step: Vec<f64> = traj
        .iter()
        .map(|u| total_loss_value(f.tensor(), m.tensor(), u.tensor(), 0.1).unwrap())
        .collect();
    let mut want = per_step[6];
    for t in 1..=6 {
        want += 10f64.powf((t - 1) as f64 / 5.0) * per_step[t];
    }
    assert!((loss_value(&net, &f, &m, &cfg) - want).abs() < 1e-12);
}

#[test]
fn trajectory_prefix_and_length() {
    let net = UpdateNetwork::<f64>::new(NetworkConfig::default(), 4, FinalLayerInit::Random);
    let (f, m) = smooth_pair(9, 8);
    assert_eq!(unroll_forward(&net, &f, &m, 0).unwrap().len(), 1);
    let short = unroll_forward(&net, &f, &m, 3).unwrap();
    let long = unroll_forward(&net, &f, &m, 7).unwrap();
    assert_eq!(long.len(), 8);
    assert_eq!(&long[..4], &short[..]);
}

#[test]
fn inference_does_not_touch_parameters() {
    let net = UpdateNetwork::<f64>::new(NetworkConfig::default(), 5, FinalLayerInit::Random);
    let before = net.params.clone();
    let (f, m) = smooth_pair(10, 8);
    unroll_forward(&net, &f, &m, 12).unwrap();
    assert_eq!(net.params, before);
}
