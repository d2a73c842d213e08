use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_equireg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn equireg")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn gen(dir: &Path) {
    ok(&["gen", "--out", dir.to_str().unwrap(), "--pairs", "13", "--seed", "7", "--size", "32", "32"]);
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == name).unwrap_or_else(|| panic!("no column {name}"));
    lines.map(|l| l.split(',').nth(i).unwrap().to_string()).collect()
}

#[test]
fn identity_baseline_matches_unregistered_dice() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data);
    assert!(data.join("manifest.txt").is_file());
    let out = tmp.path().join("id.csv");
    ok(&["eval", "--baseline", "identity", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let csv = fs::read_to_string(out).unwrap();
    let dice = column(&csv, "dice");
    assert_eq!(dice.len(), 2);
    assert_eq!(dice, column(&csv, "dice_initial"));
}

#[test]
fn train_register_sweep_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data);
    let cfg = tmp.path().join("train.txt");
    fs::write(&cfg, "epochs = 1\nlr = 1e-3\nsolver_steps = 4\nphantom_steps = 2\n").unwrap();
    for mode in ["unroll", "deq"] {
        let cfg_path = if mode == "deq" { cfg.clone() } else {
            let p = tmp.path().join("unroll.txt");
            fs::write(&p, "epochs = 1\nunroll_steps = 2\n").unwrap();
            p
        };
        let model = tmp.path().join(format!("model_{mode}"));
        ok(&[
            "train", "--mode", mode, "--data", data.to_str().unwrap(), "--out", model.to_str().unwrap(),
            "--config", cfg_path.to_str().unwrap(),
        ]);
        let epochs = fs::read_to_string(model.join("epochs.csv")).unwrap();
        assert_eq!(epochs.lines().count(), 2);

        let field = tmp.path().join(format!("{mode}_field.dten"));
        ok(&[
            "register", "--mode", mode, "--model", model.to_str().unwrap(),
            "--pair", data.join("pairs/00000").to_str().unwrap(), "--steps", "3", "--out", field.to_str().unwrap(),
        ]);
        let report = fs::read_to_string(field.with_extension("csv")).unwrap();
        assert!(report.starts_with("step,residual,update_norm"));
        assert!(fs::read(&field).unwrap().starts_with(b"DTEN"));
        if mode == "deq" {
            let pair = data.join("pairs/00000");
            let base = ["register", "--mode", mode, "--model", model.to_str().unwrap(), "--pair", pair.to_str().unwrap()];
            let loose = [&base[..], &["--steps", "3", "--tol", "10", "--out", field.to_str().unwrap()]].concat();
            ok(&loose);
            let report = fs::read_to_string(field.with_extension("csv")).unwrap();
            // The first residual is measured from u = 0 and is always large.
            assert_eq!(report.lines().count(), 3, "a huge tolerance stops at the second evaluation");
            let bad = [&base[..], &["--steps", "3", "--tol", "0", "--out", field.to_str().unwrap()]].concat();
            assert_eq!(run(&bad).status.code(), Some(2));
        }

        let sweep = tmp.path().join(format!("{mode}_sweep.csv"));
        ok(&[
            "sweep", "--model", model.to_str().unwrap(), "--data", data.to_str().unwrap(), "--steps", "1,2",
            "--out", sweep.to_str().unwrap(),
        ]);
        assert_eq!(fs::read_to_string(&sweep).unwrap().lines().count(), 3);
        assert!(tmp.path().join(format!("{mode}_sweep_records.csv")).is_file());
    }
}

#[test]
fn classical_register_writes_field_and_losses() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data);
    let field = tmp.path().join("c.dten");
    ok(&[
        "register", "--mode", "classical", "--pair", data.join("pairs/00001").to_str().unwrap(), "--steps", "5",
        "--out", field.to_str().unwrap(),
    ]);
    let losses = fs::read_to_string(field.with_extension("csv")).unwrap();
    assert!(losses.starts_with("iteration,loss"));
    assert!(losses.lines().count() >= 3);
}

#[test]
fn memreport_deq_column_is_constant() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("mem.csv");
    ok(&["memreport", "--mode", "deq", "--steps-list", "3,6,9", "--out", out.to_str().unwrap()]);
    let csv = fs::read_to_string(out).unwrap();
    let states = column(&csv, "stored_states");
    assert_eq!(states.len(), 3);
    assert!(states.iter().all(|s| *s == states[0]));
}

#[test]
fn error_exit_codes() {
    assert_eq!(run(&["eval", "--bogus"]).status.code(), Some(2));
    let missing = run(&["eval", "--baseline", "identity", "--data", "/nonexistent", "--out", "/tmp/x.csv"]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(!missing.stderr.is_empty());

    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data);
    let model = tmp.path().join("broken");
    fs::create_dir_all(&model).unwrap();
    fs::write(model.join("model.txt"), "format = 1\nkind = deq\n").unwrap();
    let corrupt = run(&[
        "sweep", "--model", model.to_str().unwrap(), "--data", data.to_str().unwrap(), "--out",
        tmp.path().join("s.csv").to_str().unwrap(),
    ]);
    assert_eq!(corrupt.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&corrupt.stderr).contains("checkpoint"));
}
