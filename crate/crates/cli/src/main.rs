use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use equireg::checkpoint::{Checkpoint, ModelKind};
use equireg::classical::{classical_register, ClassicalConfig};
use equireg::config::{apply_training_config, KeyValues};
use equireg::corpus::{load_split, write_corpus, Manifest, Split};
use equireg::deq::deq_register;
use equireg::eval::{convergence_sweep, evaluate_pair, records_csv, Method, DEFAULT_SWEEP_STEPS};
use equireg::io::{read_dten, write_dten};
use equireg::memory::{memory_csv, memory_report, MemoryProbe};
use equireg::registration::Image2D;
use equireg::selftest::run_selftest;
use equireg::synth::SynthConfig;
use equireg::train::{initial_network, train, TrainConfig, EPOCH_HEADER};
use equireg::unroll::unroll_forward;
use equireg::{Error, Tensor};

const EXIT_SELFTEST: u8 = 1;
const EXIT_IO: u8 = 3;
const EXIT_FORMAT: u8 = 4;
const EXIT_RUNTIME: u8 = 5;

#[derive(Parser)]
#[command(name = "equireg", version, about = "Deformable 2D registration: classical, unrolled and equilibrium")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with a manifest.
    Gen(GenArgs),
    /// Train an update network and write a checkpoint.
    Train(TrainArgs),
    /// Register one pair and write the displacement field.
    Register(RegisterArgs),
    /// Evaluate a model or baseline on one split.
    Eval(EvalArgs),
    /// Evaluate a model across several step budgets.
    Sweep(SweepArgs),
    /// Count stored training states across step budgets.
    Memreport(MemArgs),
    /// Run the built-in checks.
    Selftest,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 260)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, num_args = 2, value_names = ["H", "W"], default_values_t = [64, 64])]
    size: Vec<usize>,
    #[arg(long, default_value_t = 4.0)]
    amp: f64,
    #[arg(long, default_value_t = 8.0)]
    blur: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainKind {
    Unroll,
    Deq,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    mode: TrainKind,
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint directory.
    #[arg(long)]
    out: PathBuf,
    /// `key = value` hyperparameter file.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RegisterKind {
    Classical,
    Unroll,
    Deq,
}

#[derive(Args)]
struct RegisterArgs {
    #[arg(long, value_enum)]
    mode: RegisterKind,
    /// Checkpoint directory (unroll and deq).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Pair directory holding fixed.dten and moving.dten.
    #[arg(long)]
    pair: PathBuf,
    #[arg(long)]
    steps: usize,
    #[arg(long)]
    out: PathBuf,
    /// Per-step report CSV; defaults to the field path with a `.csv` extension.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Relative residual tolerance of the equilibrium solve; defaults to the checkpoint's.
    #[arg(long)]
    tol: Option<f64>,
    /// Regularization weight of the classical objective.
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Identity,
    GroundTruth,
    Classical,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, required_unless_present = "baseline", conflicts_with = "baseline")]
    model: Option<PathBuf>,
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Regularization weight of the classical baseline.
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SWEEP_STEPS.to_vec())]
    steps: Vec<usize>,
    /// Defaults to the step count stored in the checkpoint.
    #[arg(long)]
    trained_steps: Option<usize>,
    /// Summary CSV; per-pair records go next to it with a `_records` suffix.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
}

#[derive(Args)]
struct MemArgs {
    #[arg(long, value_enum)]
    mode: TrainKind,
    #[arg(long, value_delimiter = ',', default_values_t = vec![2, 4, 8, 16])]
    steps_list: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Side length of the probe images.
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } => EXIT_IO,
            Error::Dten(_) | Error::Parse { .. } | Error::Checkpoint { .. } => EXIT_FORMAT,
            _ => EXIT_RUNTIME,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn write_text(path: &Path, text: &str) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}{suffix}.csv"))
}

fn load_model(path: &Path) -> CliResult<Checkpoint<f32>> {
    Ok(Checkpoint::load(path)?)
}

fn gen(args: GenArgs) -> CliResult {
    let cfg = SynthConfig {
        height: args.size[0],
        width: args.size[1],
        amp: args.amp,
        blur: args.blur,
        ..Default::default()
    };
    let manifest = write_corpus(&args.out, args.pairs, args.seed, &cfg)?;
    info!("wrote {} pairs to {}", manifest.entries.len(), args.out.display());
    Ok(())
}

fn train_cmd(args: TrainArgs) -> CliResult {
    let mut cfg = match args.mode {
        TrainKind::Unroll => TrainConfig::unroll(),
        TrainKind::Deq => TrainConfig::deq(),
    };
    if let Some(path) = &args.config {
        apply_training_config(&KeyValues::read(path)?, &mut cfg)?;
    }
    let manifest = Manifest::read(&args.data)?;
    let pairs = load_split(&args.data, &manifest, Split::Train)?;
    if pairs.is_empty() {
        return Err(usage(format!("{} has no training pairs", args.data.display())));
    }
    info!("training {} on {} pairs for {} epochs", cfg.mode.name(), pairs.len(), cfg.epochs);
    let mut net = initial_network::<f32>(&cfg);
    let mut csv = format!("{EPOCH_HEADER}\n");
    train(&mut net, &pairs, &cfg, |log| {
        info!("{}", log.csv_row());
        csv.push_str(&log.csv_row());
        csv.push('\n');
    })?;
    Checkpoint::from_training(net, &cfg).save(&args.out)?;
    write_text(&args.out.join("epochs.csv"), &csv)?;
    write_text(&args.out.join("train_config.txt"), &equireg::config::render_training_config(&cfg))?;
    Ok(())
}

fn read_image(path: &Path) -> CliResult<Image2D<f32>> {
    let t: Tensor<f64> = read_dten(path)?;
    Ok(Image2D::from_tensor(t.cast())?)
}

fn register(args: RegisterArgs) -> CliResult {
    if args.steps == 0 {
        return Err(usage("--steps must be at least 1"));
    }
    if args.tol.is_some_and(|t| !(t > 0.0)) {
        return Err(usage("--tol must be positive"));
    }
    let fixed = read_image(&args.pair.join("fixed.dten"))?;
    let moving = read_image(&args.pair.join("moving.dten"))?;
    let (field, report) = match args.mode {
        RegisterKind::Classical => {
            let cfg = ClassicalConfig {
                lambda: args.lambda,
                max_iters: args.steps,
                ..Default::default()
            };
            let r = classical_register(&fixed.cast::<f64>(), &moving.cast::<f64>(), &cfg)?;
            let mut csv = String::from("iteration,loss\n");
            for (i, l) in r.losses.iter().enumerate() {
                csv.push_str(&format!("{i},{l}\n"));
            }
            (r.field.into_tensor(), csv)
        }
        RegisterKind::Unroll | RegisterKind::Deq => {
            let path = args.model.as_ref().ok_or_else(|| usage("--model is required for learned modes"))?;
            let ckpt = load_model(path)?;
            let want = if args.mode == RegisterKind::Deq { ModelKind::Deq } else { ModelKind::Unroll };
            if ckpt.kind != want {
                return Err(usage(format!("checkpoint holds a {} model", ckpt.kind)));
            }
            if want == ModelKind::Unroll {
                let traj = unroll_forward(&ckpt.network, &fixed, &moving, args.steps)?;
                let mut csv = String::from("step,residual,update_norm\n");
                for (t, w) in traj.windows(2).enumerate() {
                    let delta = w[1].tensor().sub(w[0].tensor())?.norm();
                    csv.push_str(&format!("{},{},{}\n", t + 1, delta / (w[0].tensor().norm() + 1e-8), delta));
                }
                (traj[args.steps].tensor().cast(), csv)
            } else {
                let cfg = equireg::deq::SolverConfig {
                    max_steps: args.steps,
                    rel_tol: args.tol.unwrap_or(ckpt.solver.rel_tol),
                    ..ckpt.solver
                };
                let (field, sol) = deq_register(&ckpt.network, &fixed, &moving, &cfg)?;
                let mut csv = String::from("step,residual,update_norm\n");
                for (i, (r, u)) in sol.report.residual_trace.iter().zip(&sol.report.update_norms).enumerate() {
                    csv.push_str(&format!("{},{r},{u}\n", i + 1));
                }
                info!(
                    "steps used {}, final residual {:.3e}, converged {}",
                    sol.report.steps_used,
                    sol.report.final_residual(),
                    sol.report.converged
                );
                (field.tensor().cast(), csv)
            }
        }
    };
    write_dten::<f64>(&args.out, &field)?;
    let report_path = args.report.unwrap_or_else(|| args.out.with_extension("csv"));
    write_text(&report_path, &report)
}

fn eval(args: EvalArgs) -> CliResult {
    let manifest = Manifest::read(&args.data)?;
    let pairs = load_split(&args.data, &manifest, args.split.into())?;
    let ckpt = args.model.as_deref().map(load_model).transpose()?;
    let method: Method<f32> = match (&ckpt, args.baseline) {
        (Some(c), _) => match c.kind {
            ModelKind::Unroll => Method::Unroll(&c.network),
            ModelKind::Deq => Method::Deq(&c.network, c.solver),
        },
        (None, Some(Baseline::Identity)) => Method::Identity,
        (None, Some(Baseline::GroundTruth)) => Method::GroundTruth,
        (None, Some(Baseline::Classical)) => Method::Classical(ClassicalConfig {
            lambda: args.lambda,
            ..Default::default()
        }),
        (None, None) => return Err(usage("either --model or --baseline is required")),
    };
    let steps = args.steps.unwrap_or_else(|| match (&ckpt, &method) {
        (Some(c), _) => c.trained_steps,
        (None, Method::Classical(c)) => c.max_iters,
        _ => 1,
    });
    let records = pairs
        .iter()
        .map(|p| evaluate_pair(&method, p, steps))
        .collect::<Result<Vec<_>, _>>()?;
    let n = records.len().max(1) as f64;
    info!(
        "{} pairs: dice {:.4} (initial {:.4}), tre {:.3} (initial {:.3})",
        records.len(),
        records.iter().map(|r| r.dice).sum::<f64>() / n,
        records.iter().map(|r| r.dice_initial).sum::<f64>() / n,
        records.iter().map(|r| r.tre).sum::<f64>() / n,
        records.iter().map(|r| r.tre_initial).sum::<f64>() / n,
    );
    write_text(&args.out, &records_csv(&records))
}

fn sweep(args: SweepArgs) -> CliResult {
    if args.steps.is_empty() || args.steps.contains(&0) {
        return Err(usage("--steps needs positive step counts"));
    }
    let ckpt = load_model(&args.model)?;
    let manifest = Manifest::read(&args.data)?;
    let pairs = load_split(&args.data, &manifest, args.split.into())?;
    let method: Method<f32> = match ckpt.kind {
        ModelKind::Unroll => Method::Unroll(&ckpt.network),
        ModelKind::Deq => Method::Deq(&ckpt.network, ckpt.solver),
    };
    let trained = args.trained_steps.unwrap_or(ckpt.trained_steps);
    let result = convergence_sweep(&method, &pairs, &args.steps, trained)?;
    info!("best Dice at {} steps (trained {})", result.best_steps, result.trained_steps);
    write_text(&args.out, &result.rows_csv())?;
    write_text(&with_suffix(&args.out, "_records"), &records_csv(&result.records))
}

fn memreport(args: MemArgs) -> CliResult {
    if args.steps_list.is_empty() || args.steps_list.contains(&0) {
        return Err(usage("--steps-list needs positive step counts"));
    }
    let kind = match args.mode {
        TrainKind::Unroll => ModelKind::Unroll,
        TrainKind::Deq => ModelKind::Deq,
    };
    let probe = MemoryProbe {
        size: args.size,
        seed: args.seed,
        ..Default::default()
    };
    let rows = memory_report(kind, &args.steps_list, &probe)?;
    write_text(&args.out, &memory_csv(&rows))
}

fn selftest() -> CliResult {
    let results = run_selftest();
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Failure {
            code: EXIT_SELFTEST,
            message: format!("{failed} of {} checks failed", results.len()),
        });
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train_cmd(a),
        Command::Register(a) => register(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::Memreport(a) => memreport(a),
        Command::Selftest => selftest(),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
