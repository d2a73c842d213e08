use equireg::corpus::{load_split, write_corpus, Manifest, Split};
use equireg::deq::{deq_register, SolverConfig};
use equireg::network::{FinalLayerInit, NetworkConfig, UpdateNetwork};
use equireg::synth::{generate_pair, SynthConfig};
use equireg::train::{initial_network, train, TrainConfig};

fn small() -> SynthConfig {
    SynthConfig {
        height: 32,
        width: 32,
        ..Default::default()
    }
}

#[test]
fn corpus_written_twice_is_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = write_corpus(a.path(), 6, 11, &small()).unwrap();
    write_corpus(b.path(), 6, 11, &small()).unwrap();
    for e in &ma.entries {
        for f in ["fixed.dten", "moving.dten", "gt_field.dten", "labels_fixed.dten", "keypoints_moving.csv"] {
            let x = std::fs::read(a.path().join(&e.dir).join(f)).unwrap();
            let y = std::fs::read(b.path().join(&e.dir).join(f)).unwrap();
            assert_eq!(x, y, "{f}");
        }
    }
    let read = Manifest::read(a.path()).unwrap();
    assert_eq!(read.entries, ma.entries);
    let test = load_split(a.path(), &read, Split::Test).unwrap();
    let entry = read.split(Split::Test).next().unwrap();
    assert_eq!(test[0], generate_pair(entry.seed, &small()).unwrap());
}

fn loss_trace(cfg: &TrainConfig) -> Vec<u64> {
    let pairs: Vec<_> = (0..3).map(|s| generate_pair(s, &small()).unwrap()).collect();
    let mut net = initial_network::<f64>(cfg);
    let logs = train(&mut net, &pairs, cfg, |_| {}).unwrap();
    logs.iter()
        .map(|l| l.mean_loss.to_bits())
        .chain(net.params.flatten().iter().map(|v| v.to_bits()))
        .collect()
}

#[test]
fn training_is_bit_reproducible_in_f64() {
    for mut cfg in [TrainConfig::unroll(), TrainConfig::deq()] {
        cfg.epochs = 2;
        cfg.optim.lr = 1e-3;
        if let equireg::train::TrainMode::Deq(d) = &mut cfg.mode {
            d.solver.max_steps = 6;
        }
        assert_eq!(loss_trace(&cfg), loss_trace(&cfg));
    }
}

#[test]
fn solved_fields_are_bit_reproducible_in_f64() {
    let pair = generate_pair(5, &small()).unwrap();
    let net = UpdateNetwork::<f64>::new(NetworkConfig::default(), 9, FinalLayerInit::Random);
    let cfg = SolverConfig::default();
    let (a, ra) = deq_register(&net, &pair.fixed, &pair.moving, &cfg).unwrap();
    let (b, rb) = deq_register(&net, &pair.fixed, &pair.moving, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra.report.residual_trace, rb.report.residual_trace);
}
