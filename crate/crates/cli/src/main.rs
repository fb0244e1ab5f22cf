//! `dfsmn` command-line front end.
//!
//! Exit codes: 0 success, 1 check or experiment failure, 2 usage or
//! validation error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use dfsmn::analysis::{render_json_lines, render_text, table_report};
use dfsmn::dataset::{read_dataset, write_dataset};
use dfsmn::gradcheck::{grad_check, GradCheckOptions};
use dfsmn::layers::Activation;
use dfsmn::metrics::{bapd, f0_rmse, mcd, total_mse, uv_error, DatasetNorm};
use dfsmn::model_io::{load_model, save_model, AnyParams};
use dfsmn::synth::{gen_acoustic_toy, gen_echo_task, EchoSpec, ToySpec};
use dfsmn::trainer::{check_dataset, format_history};
use dfsmn::{
    build_network, forward, train, CostReport, Dataset, Error, Execution, Matrix, NetworkConfig, NetworkParams,
    Precision, Real, StreamMap, TrainConfig,
};

#[derive(Parser)]
#[command(name = "dfsmn", version, about = "DFSMN acoustic-model toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parameter count, size, FLOPS and receptive field of presets or a config.
    Analyze(AnalyzeArgs),
    /// Compare analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic dataset.
    Synthdata(SynthArgs),
    /// Train a network with SGD.
    Train(TrainArgs),
    /// Objective measures of a model, or of a hypothesis directory, against reference data.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Preset A..I; all presets when neither this nor --config is given.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 20)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    /// Scalars checked per parameter class.
    #[arg(long, default_value_t = 32)]
    samples: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    Echo,
    #[value(name = "acoustic_toy")]
    AcousticToy,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "echo")]
    task: Task,
    /// Echo delay in frames.
    #[arg(long, default_value_t = 8)]
    lag: usize,
    #[arg(long, default_value_t = 64)]
    sequences: usize,
    #[arg(long = "len", default_value_t = 64)]
    seq_len: usize,
    /// Validation sequences.
    #[arg(long, default_value_t = 16)]
    valid: usize,
    /// Input dimension.
    #[arg(long, default_value_t = 4)]
    dim: usize,
    /// Echo target noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Output directory; `train/` and `valid/` are created below it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Validation data; the training data is reused when absent.
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Model file; `<out>.norm.json` and `<out>.history` are written next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    lr: f64,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 512)]
    batch_frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    decay: f64,
    #[arg(long, default_value_t = 1)]
    patience: usize,
    #[arg(long, default_value_t = 0.005)]
    min_improvement: f64,
    #[arg(long)]
    history: Option<PathBuf>,
    /// Disable the thread pool.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["model", "hyp"])))]
struct EvalArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Directory of predicted features, matched to the reference by sequence id.
    #[arg(long)]
    hyp: Option<PathBuf>,
    /// Reference data.
    #[arg(long)]
    data: PathBuf,
}

enum Failure {
    Check(String),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite { .. } => Failure::Check(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Synthdata(a) => synthdata(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn read_config(path: &Path) -> Result<NetworkConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    NetworkConfig::parse(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn emit(text: &str, out: Option<&Path>) -> CmdResult {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn analyze(args: AnalyzeArgs) -> CmdResult {
    let (reports, all) = match (&args.preset, &args.config) {
        (Some(p), _) => (vec![CostReport::for_preset(p)?], false),
        (None, Some(path)) => {
            let cfg = read_config(path)?;
            let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("config");
            (vec![CostReport::for_config(name, &cfg)], false)
        }
        (None, None) => (table_report(&[])?, true),
    };
    let text = match args.format {
        Format::Text => render_text(&reports, all),
        Format::Json => render_json_lines(&reports)?,
    };
    emit(&text, args.out.as_deref())
}

fn gradcheck(args: GradcheckArgs) -> CmdResult {
    let mut cfg = read_config(&args.config)?;
    if cfg.precision != Precision::F64 {
        eprintln!("note: promoting {:?} config to f64 for the check", cfg.precision);
        cfg = cfg.with_precision(Precision::F64);
    }
    let opts = GradCheckOptions {
        frames: args.frames,
        seed: args.seed,
        step: args.step,
        tolerance: args.tol,
        samples_per_class: args.samples,
        ..GradCheckOptions::default()
    };
    let report = grad_check(&cfg, &opts)?;
    print!("{}", report.render());
    if report.passed {
        println!("PASS (tolerance {:e})", args.tol);
        return Ok(());
    }
    let worst = report.worst().expect("at least one class");
    Err(Failure::Check(format!(
        "gradient check failed; worst class {} with relative error {:.3e} (analytic {:e}, numeric {:e}) at tolerance {:e}",
        worst.class, worst.max_rel_err, worst.analytic, worst.numeric, args.tol
    )))
}

fn synthdata(args: SynthArgs) -> CmdResult {
    let (train_set, valid_set) = match args.task {
        Task::Echo => gen_echo_task(
            &EchoSpec {
                input_dim: args.dim,
                lag: args.lag,
                noise_std: args.noise,
                num_sequences: args.sequences,
                num_valid: args.valid,
                seq_len: args.seq_len,
            },
            args.seed,
        )?,
        Task::AcousticToy => gen_acoustic_toy(
            &ToySpec {
                input_dim: args.dim,
                num_sequences: args.sequences,
                num_valid: args.valid,
                seq_len: args.seq_len,
                ..ToySpec::default()
            },
            args.seed,
        )?,
    };
    for (name, ds) in [("train", &train_set), ("valid", &valid_set)] {
        write_dataset(args.out.join(name), ds)?;
    }
    println!(
        "wrote {} train and {} valid sequences to {}",
        train_set.len(),
        valid_set.len(),
        args.out.display()
    );
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Streams of `cfg` that are normalized: everything but sigmoid heads.
fn normalized_streams(cfg: &NetworkConfig) -> Vec<&str> {
    cfg.output_streams
        .iter()
        .filter(|s| s.activation != Activation::Sigmoid)
        .map(|s| s.name.as_str())
        .collect()
}

fn train_cmd(args: TrainArgs) -> CmdResult {
    let cfg = read_config(&args.config)?;
    let train_raw = read_dataset(&args.data)?.cast::<f64>();
    let valid_raw = match &args.valid {
        Some(dir) => read_dataset(dir)?.cast::<f64>(),
        None => {
            eprintln!("note: no --valid given; validating on the training data");
            train_raw.clone()
        }
    };
    check_dataset(&cfg, &train_raw)?;
    check_dataset(&cfg, &valid_raw)?;
    let norm = DatasetNorm::fit(&train_raw, &normalized_streams(&cfg))?;
    let tc = TrainConfig {
        batch_frames: args.batch_frames,
        lr: args.lr,
        decay_factor: args.decay,
        patience: args.patience,
        min_improvement: args.min_improvement,
        max_epochs: args.epochs,
        seed: args.seed,
        stream_weights: BTreeMap::new(),
        execution: if args.sequential { Execution::Sequential } else { Execution::default() },
    };
    tc.validate()?;
    let train_set = norm.apply(&train_raw)?;
    let valid_set = norm.apply(&valid_raw)?;
    let history = match cfg.precision {
        Precision::F32 => fit_and_save::<f32>(&cfg, &train_set, &valid_set, &tc, &args.out)?,
        Precision::F64 => fit_and_save::<f64>(&cfg, &train_set, &valid_set, &tc, &args.out)?,
    };
    norm.save(sibling(&args.out, ".norm.json"))?;
    let history_path = args.history.clone().unwrap_or_else(|| sibling(&args.out, ".history"));
    fs::write(&history_path, format_history(&history)).map_err(Error::from)?;
    if let Some(last) = history.last() {
        println!(
            "epoch {}: train_mse {:.6} valid_mse {:.6} lr {:e}",
            last.epoch, last.train_mse, last.valid_mse, last.lr
        );
    }
    println!("model written to {}", args.out.display());
    Ok(())
}

fn fit_and_save<T: Real>(
    cfg: &NetworkConfig,
    train_set: &Dataset<f64>,
    valid_set: &Dataset<f64>,
    tc: &TrainConfig,
    out: &Path,
) -> Result<Vec<dfsmn::trainer::EpochRecord>, Failure> {
    let params = build_network::<T>(cfg, tc.seed)?;
    let outcome = train(cfg, params, &train_set.cast::<T>(), &valid_set.cast::<T>(), tc)?;
    save_model(&outcome.params, cfg, out)?;
    Ok(outcome.history)
}

fn predict<T: Real>(params: &NetworkParams<T>, cfg: &NetworkConfig, input: &Matrix<f64>) -> Result<StreamMap<f64>, Failure> {
    let out = forward(params, cfg, &input.cast::<T>())?;
    Ok(out.streams.iter().map(|(k, v)| (k.clone(), v.cast())).collect())
}

/// Streams concatenated over all sequences, in sequence order.
fn concat(data: &Dataset<f64>, stream: &str) -> Result<Matrix<f64>, Failure> {
    let parts: Vec<&Matrix<f64>> = data.sequences.iter().filter_map(|s| s.targets.get(stream)).collect();
    Ok(Matrix::vstack(&parts)?)
}

fn column(m: &Matrix<f64>, j: usize) -> Vec<f64> {
    (0..m.rows()).map(|t| m.get(t, j)).collect()
}

fn eval(args: EvalArgs) -> CmdResult {
    let reference = read_dataset(&args.data)?.cast::<f64>();
    if reference.is_empty() {
        return Err(Error::EmptyDataset.into());
    }
    let (hyp_raw, hyp_norm, ref_norm) = match (&args.model, &args.hyp) {
        (Some(path), _) => {
            let model = load_model(path)?;
            let cfg = &model.config;
            let norm_path = sibling(path, ".norm.json");
            let norm = if norm_path.exists() {
                DatasetNorm::load(&norm_path)?
            } else {
                eprintln!("note: {} not found; using unnormalized features", norm_path.display());
                DatasetNorm::fit(&reference, &[])?
            };
            for seq in &reference.sequences {
                if seq.input.cols() != cfg.input_dim {
                    return Err(Error::StreamDim {
                        stream: "input".into(),
                        expected: cfg.input_dim,
                        found: seq.input.cols(),
                    }
                    .into());
                }
                for s in &cfg.output_streams {
                    if let Some(t) = seq.targets.get(&s.name) {
                        if t.cols() != s.dim {
                            return Err(Error::StreamDim {
                                stream: s.name.clone(),
                                expected: s.dim,
                                found: t.cols(),
                            }
                            .into());
                        }
                    }
                }
            }
            let ref_norm = norm.apply(&reference)?;
            let mut hyp_norm = Dataset::default();
            for seq in &ref_norm.sequences {
                let streams = match &model.params {
                    AnyParams::F32(p) => predict(p, cfg, &seq.input)?,
                    AnyParams::F64(p) => predict(p, cfg, &seq.input)?,
                };
                hyp_norm.sequences.push(dfsmn::Sequence {
                    id: seq.id.clone(),
                    input: seq.input.clone(),
                    targets: streams,
                });
            }
            (norm.invert(&hyp_norm)?, hyp_norm, ref_norm)
        }
        (None, Some(dir)) => {
            let hyp = read_dataset(dir)?.cast::<f64>();
            let by_id: BTreeMap<&str, &dfsmn::Sequence<f64>> = hyp.sequences.iter().map(|s| (s.id.as_str(), s)).collect();
            let mut aligned = Dataset::default();
            for seq in &reference.sequences {
                let h = by_id
                    .get(seq.id.as_str())
                    .ok_or_else(|| Failure::Usage(format!("sequence `{}` missing from {}", seq.id, dir.display())))?;
                aligned.sequences.push((*h).clone());
            }
            let streams: Vec<String> = reference
                .stream_dims()
                .into_keys()
                .filter(|k| k != "uv")
                .collect();
            let names: Vec<&str> = streams.iter().map(String::as_str).collect();
            let norm = DatasetNorm::fit(&reference, &names)?;
            let hyp_norm = norm.apply(&aligned)?;
            (aligned, hyp_norm, norm.apply(&reference)?)
        }
        (None, None) => unreachable!("clap requires --model or --hyp"),
    };

    let has = |name: &str| {
        reference.sequences.iter().all(|s| s.targets.contains_key(name))
            && hyp_raw.sequences.iter().all(|s| s.targets.contains_key(name))
    };
    for s in ["mcep", "lf0", "bap", "uv"] {
        if has(s) {
            let (r, h) = (concat(&reference, s)?, concat(&hyp_raw, s)?);
            if r.shape() != h.shape() {
                return Err(Error::StreamDim {
                    stream: s.into(),
                    expected: r.cols(),
                    found: h.cols(),
                }
                .into());
            }
        }
    }

    let mut out = String::new();
    let skip = |metric: &str, missing: &str| eprintln!("note: skipping {metric}: stream `{missing}` not available");
    if has("mcep") {
        let v = mcd(&concat(&reference, "mcep")?, &concat(&hyp_raw, "mcep")?)?;
        let _ = writeln!(out, "mcd_db\t{v:.6}");
    } else {
        skip("MCD", "mcep");
    }
    if has("lf0") && has("uv") {
        let (rl, hl) = (concat(&reference, "lf0")?, concat(&hyp_raw, "lf0")?);
        let (ru, hu) = (concat(&reference, "uv")?, concat(&hyp_raw, "uv")?);
        let ref_hz: Vec<f64> = column(&rl, 0).iter().map(|v| v.exp()).collect();
        match f0_rmse(&ref_hz, &column(&hl, 0), ru.data(), hu.data()) {
            Ok(v) => {
                let _ = writeln!(out, "f0_rmse_hz\t{v:.6}");
            }
            Err(Error::NoCommonVoiced) => eprintln!("note: skipping F0 RMSE: no frame voiced in both"),
            Err(e) => return Err(e.into()),
        }
    } else {
        skip("F0 RMSE", if has("lf0") { "uv" } else { "lf0" });
    }
    if has("bap") {
        let v = bapd(&concat(&reference, "bap")?, &concat(&hyp_raw, "bap")?)?;
        let _ = writeln!(out, "bapd\t{v:.6}");
    } else {
        skip("BAPD", "bap");
    }
    if has("uv") {
        let v = uv_error(concat(&reference, "uv")?.data(), concat(&hyp_raw, "uv")?.data(), 0.5)?;
        let _ = writeln!(out, "uv_error\t{v:.6}");
    } else {
        skip("U/V error", "uv");
    }

    let common: Vec<String> = hyp_norm
        .stream_dims()
        .into_keys()
        .filter(|k| ref_norm.sequences.iter().all(|s| s.targets.contains_key(k)))
        .collect();
    if common.is_empty() {
        eprintln!("note: skipping total MSE: no stream shared by reference and hypothesis");
    } else {
        let refs: Vec<Matrix<f64>> = common.iter().map(|k| concat(&ref_norm, k)).collect::<Result<_, _>>()?;
        let hyps: Vec<Matrix<f64>> = common.iter().map(|k| concat(&hyp_norm, k)).collect::<Result<_, _>>()?;
        let v = total_mse(&refs.iter().collect::<Vec<_>>(), &hyps.iter().collect::<Vec<_>>())?;
        let _ = writeln!(out, "total_mse\t{v:.6}");
    }
    print!("{out}");
    Ok(())
}
