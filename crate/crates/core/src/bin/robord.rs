use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use robord::data::{generate_synth, load_csv_with_extra, LabelColumn, SynthSpec};
use robord::harness::{
    evaluate, grid_search, parse_config_text, run_experiment, Correction, DataSource, ExperimentPlan,
};
use robord::losses::{BaseLoss, LossSpec};
use robord::netcore::Activation;
use robord::noise_estimation::{estimate_matrix, matrix_error, train_multiclass, write_estimate, EstimationConfig};
use robord::noise_model::{build_noise_matrix, NoiseMatrix, NoiseSpec};
use robord::ordinal_model::{train, OrdinalModel, TrainConfig};
use robord::{Error, Result};

#[derive(Parser)]
#[command(name = "robord", version, about = "Noise-robust ordinal regression toolkit")]
#[command(args_override_self = true)]
struct Cli {
    /// key = value file whose entries act as flags; explicit flags win.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic linear ordinal dataset as CSV.
    Synth(SynthArgs),
    /// Append a noisy_label column drawn from a noise matrix.
    Corrupt(CorruptArgs),
    /// Build, invert and print a noise matrix.
    NoiseMatrix(NoiseMatrixArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Estimate the noise matrix from noisy labels.
    EstimateNoise(EstimateArgs),
    /// Score a saved model on a labelled CSV.
    Evaluate(EvaluateArgs),
    /// Run the multi-trial experiment.
    Experiment(ExperimentArgs),
    /// 5-fold CV over learning rate and hidden size.
    GridSearch(GridArgs),
}

#[derive(Args, Clone)]
struct NoiseArgs {
    /// Uniform inversely decaying noise rate.
    #[arg(long)]
    rho: Option<f64>,
    /// Comma-separated per-class rates.
    #[arg(long, value_delimiter = ',')]
    rho_per_class: Option<Vec<f64>>,
    /// Explicit matrix in text format.
    #[arg(long, value_name = "PATH")]
    noise_matrix: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Input CSV.
    #[arg(long, value_name = "PATH")]
    data: Option<PathBuf>,
    /// Label column: header name or 0-based index (default: last column).
    #[arg(long)]
    label_column: Option<String>,
    /// Number of classes.
    #[arg(long)]
    k: Option<usize>,
    /// Comma-separated columns to leave out of the features.
    #[arg(long, value_delimiter = ',')]
    drop_columns: Option<Vec<String>>,
}

#[derive(Args, Clone)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Comma-separated hidden layer sizes.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long, value_enum)]
    activation: Option<ActivationArg>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ActivationArg {
    Relu,
    Linear,
}

impl From<ActivationArg> for Activation {
    fn from(a: ActivationArg) -> Self {
        match a {
            ActivationArg::Relu => Activation::Relu,
            ActivationArg::Linear => Activation::Linear,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Ce,
    Imc,
}

impl From<LossArg> for BaseLoss {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Ce => BaseLoss::Ce,
            LossArg::Imc => BaseLoss::Imc,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CorrectionArg {
    None,
    Known,
    Estimated,
}

impl From<CorrectionArg> for Correction {
    fn from(c: CorrectionArg) -> Self {
        match c {
            CorrectionArg::None => Correction::None,
            CorrectionArg::Known => Correction::Known,
            CorrectionArg::Estimated => Correction::Estimated,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 2500)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    d: usize,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Args)]
struct CorruptArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    noise: NoiseArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Args)]
struct NoiseMatrixArgs {
    #[arg(long)]
    k: Option<usize>,
    #[command(flatten)]
    noise: NoiseArgs,
    /// Write the matrix here in text format.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    noise: NoiseArgs,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long, value_enum, default_value = "ce")]
    loss: LossArg,
    #[arg(long, value_enum, default_value = "none")]
    correction: CorrectionArg,
    #[arg(long, default_value_t = 99.0)]
    percentile: f64,
    /// Model checkpoint path.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Optional true noise, used only to report the estimate's error.
    #[command(flatten)]
    noise: NoiseArgs,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long, default_value_t = 99.0)]
    percentile: f64,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    noise: NoiseArgs,
    #[command(flatten)]
    train: TrainFlags,
    /// Synthetic sample count when no --data is given.
    #[arg(long, default_value_t = 2500)]
    n: usize,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long)]
    percentile: Option<f64>,
    /// Dataset name used in reports (default: file stem or "synth").
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    plan: PlanArgs,
    /// Restrict to one base loss.
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    /// Restrict to one correction.
    #[arg(long, value_enum)]
    correction: Option<CorrectionArg>,
    /// Skip the clean-label training condition.
    #[arg(long)]
    no_clean: bool,
    /// Tune lr and hidden size by grid search before the trials.
    #[arg(long)]
    tune: bool,
    /// CSV summary path; `.txt` and `.json` siblings are also written.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    plan: PlanArgs,
    #[arg(long, value_enum, default_value = "ce")]
    loss: LossArg,
    #[arg(long, value_delimiter = ',', default_values_t = [0.001, 0.003, 0.01])]
    lr_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [16, 64, 128])]
    hidden_grid: Vec<usize>,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

fn noise_from(args: &NoiseArgs, k: usize, default_rho: Option<f64>) -> Result<Option<NoiseMatrix>> {
    let matrix = if let Some(path) = &args.noise_matrix {
        NoiseMatrix::read_from(path)?
    } else if let Some(rho) = &args.rho_per_class {
        if rho.len() != k {
            return Err(Error::DimensionMismatch { expected: k, got: rho.len() });
        }
        build_noise_matrix(&NoiseSpec::class_conditional(rho.clone()))?
    } else if let Some(rho) = args.rho.or(default_rho) {
        build_noise_matrix(&NoiseSpec::uniform(k, rho))?
    } else {
        return Ok(None);
    };
    if matrix.k() != k {
        return Err(Error::DimensionMismatch { expected: k, got: matrix.k() });
    }
    matrix.invert().map(Some)
}

fn require_k(k: Option<usize>) -> Result<usize> {
    k.ok_or_else(|| Error::ConfigInvalid("--k is required".into()))
}

fn label_column(args: &DataArgs) -> LabelColumn {
    args.label_column.as_deref().map_or(LabelColumn::Last, LabelColumn::parse)
}

/// Columns excluded from the features: `--drop-columns`, plus the clean or
/// noisy companion of the label column in files written by `corrupt`.
fn dropped_columns(path: &PathBuf, args: &DataArgs) -> Result<Vec<String>> {
    let mut drop = args.drop_columns.clone().unwrap_or_default();
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    let header: Vec<&str> = text.lines().next().unwrap_or("").split(',').map(str::trim).collect();
    let companion = match args.label_column.as_deref() {
        Some("noisy_label") => Some("label"),
        Some("label") => Some("noisy_label"),
        _ => None,
    };
    if let Some(c) = companion {
        if header.contains(&c) && !drop.iter().any(|d| d == c) {
            drop.push(c.to_string());
        }
    }
    Ok(drop)
}

fn load_path(path: &PathBuf, args: &DataArgs, k: usize) -> Result<robord::OrdinalDataset> {
    let drop = dropped_columns(path, args)?;
    let names: Vec<&str> = drop.iter().map(String::as_str).collect();
    load_csv_with_extra(path, &label_column(args), &names, k).map(|(d, _)| d)
}

fn load(args: &DataArgs) -> Result<robord::OrdinalDataset> {
    let path = args
        .data
        .as_ref()
        .ok_or_else(|| Error::ConfigInvalid("--data is required".into()))?;
    load_path(path, args, require_k(args.k)?)
}

fn print_out(text: &str) {
    // a closed pipe (e.g. `| head`) is not an error worth reporting
    let _ = std::io::stdout().write_all(text.as_bytes());
}

fn print_json(v: serde_json::Value) {
    print_out(&format!("{}\n", serde_json::to_string_pretty(&v).expect("json")));
}

fn train_config(flags: &TrainFlags, loss: LossSpec, default_act: Activation) -> TrainConfig {
    let mut cfg = TrainConfig::new(loss);
    cfg.seed = flags.seed;
    if let Some(v) = flags.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = flags.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = &flags.hidden {
        cfg.hidden_sizes = v.clone();
    }
    if let Some(v) = flags.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = flags.weight_decay {
        cfg.weight_decay = v;
    }
    cfg.activation = flags.activation.map_or(default_act, Into::into);
    cfg
}

fn estimation_config(flags: &TrainFlags, percentile: f64) -> EstimationConfig {
    let mut cfg = EstimationConfig {
        percentile,
        seed: flags.seed,
        ..EstimationConfig::default()
    };
    if let Some(v) = flags.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = flags.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = &flags.hidden {
        cfg.hidden_sizes = v.clone();
    }
    if let Some(v) = flags.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = flags.activation {
        cfg.activation = v.into();
    }
    cfg
}

fn build_plan(args: &PlanArgs) -> Result<ExperimentPlan> {
    let (source, k, name) = match &args.data.data {
        Some(path) => {
            let k = require_k(args.data.k)?;
            let name = path.file_stem().map_or("data".into(), |s| s.to_string_lossy().into_owned());
            (
                DataSource::Csv {
                    path: path.clone(),
                    label_column: label_column(&args.data),
                    k,
                    drop_columns: dropped_columns(path, &args.data)?,
                },
                k,
                name,
            )
        }
        None => {
            let k = args.data.k.unwrap_or(5);
            let spec = SynthSpec::with_shape(args.n, 2, k, args.train.seed);
            (DataSource::Synth(spec), k, "synth".to_string())
        }
    };
    let noise = noise_from(&args.noise, k, Some(0.15))?.expect("default rho");
    let mut plan = ExperimentPlan::new(args.name.as_deref().unwrap_or(&name), source, noise);
    plan.trials = args.trials;
    plan.master_seed = args.train.seed;
    let t = &args.train;
    if let Some(v) = t.epochs {
        plan.train.epochs = v;
        plan.estimation.epochs = v;
    }
    if let Some(v) = t.lr {
        plan.train.learning_rate = v;
    }
    if let Some(v) = &t.hidden {
        plan.train.hidden_sizes = v.clone();
        plan.estimation.hidden_sizes = v.clone();
    }
    if let Some(v) = t.batch_size {
        plan.train.batch_size = v;
        plan.estimation.batch_size = v;
    }
    if let Some(v) = t.weight_decay {
        plan.train.weight_decay = v;
    }
    if let Some(v) = t.activation {
        plan.train.activation = v.into();
    }
    if let Some(p) = args.percentile {
        plan.estimation.percentile = p;
    }
    Ok(plan)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => {
            let data = generate_synth(&SynthSpec::with_shape(a.n, a.d, a.k, a.seed))?;
            data.write_csv(&a.out, None)?;
            print_json(json!({"rows": data.len(), "d": data.dim(), "k": data.k(), "class_counts": data.class_counts(), "out": a.out}));
        }
        Command::Corrupt(a) => {
            let data = load(&a.data)?;
            let noise = noise_from(&a.noise, data.k(), None)?
                .ok_or_else(|| Error::ConfigInvalid("one of --rho, --rho-per-class, --noise-matrix is required".into()))?;
            let noisy = noise.corrupt_labels(data.labels(), a.seed)?;
            data.write_csv(&a.out, Some(&noisy))?;
            let flipped = noisy.iter().zip(data.labels()).filter(|(a, b)| a != b).count();
            print_json(json!({"rows": data.len(), "flipped": flipped, "out": a.out}));
        }
        Command::NoiseMatrix(a) => {
            let k = match (&a.noise.noise_matrix, a.k) {
                (Some(p), _) => NoiseMatrix::read_from(p)?.k(),
                (None, k) => require_k(k)?,
            };
            let m = noise_from(&a.noise, k, None)?
                .ok_or_else(|| Error::ConfigInvalid("one of --rho, --rho-per-class, --noise-matrix is required".into()))?;
            let d = m.diagnostics().expect("inverted");
            print_out(&format!(
                "{}# inverse\n{}\n# lipschitz_inflation {:.6}\n# condition_number {:.6e}\n# doubly_stochastic {}\n# diagonally_dominant {}\n",
                m.to_text(),
                m.inverse().expect("inverted"),
                d.lipschitz_inflation_m,
                d.condition_number,
                d.doubly_stochastic,
                d.diagonally_dominant
            ));
            if let Some(out) = a.out {
                m.write_to(&out)?;
            }
        }
        Command::Train(a) => {
            let data = load(&a.data)?;
            let base: BaseLoss = a.loss.into();
            let loss = match Correction::from(a.correction) {
                Correction::None => LossSpec::plain(base),
                Correction::Known => {
                    let m = noise_from(&a.noise, data.k(), None)?.ok_or(Error::CorrectionMissing)?;
                    LossSpec::corrected(base, m.inverse().expect("inverted").clone())?
                }
                Correction::Estimated => {
                    let cfg = estimation_config(&a.train, a.percentile);
                    let head = train_multiclass(&data, &cfg)?;
                    let m = estimate_matrix(&head, &data, &cfg)?;
                    LossSpec::corrected(base, m.inverse().expect("inverted").clone())?
                }
            };
            let cfg = train_config(&a.train, loss, Activation::Relu);
            let out = train(cfg.init_model(data.dim(), data.k())?, &data, &cfg)?;
            let metrics = evaluate(&out.model, &data)?;
            if let Some(path) = &a.out {
                out.model.save(path)?;
            }
            print_json(json!({
                "loss": cfg.loss.name(),
                "train_metrics": metrics,
                "final_loss": out.loss_curve.last(),
                "rank_log": {
                    "total_updates": out.rank_log.total_updates,
                    "unordered_updates": out.rank_log.unordered_updates,
                    "first_unordered_update": out.rank_log.first_unordered_update,
                    "final_ordered": out.rank_log.final_ordered,
                },
                "thresholds": out.model.thresholds().as_slice(),
                "out": a.out,
            }));
        }
        Command::EstimateNoise(a) => {
            let data = load(&a.data)?;
            let cfg = estimation_config(&a.train, a.percentile);
            let head = train_multiclass(&data, &cfg)?;
            let est = estimate_matrix(&head, &data, &cfg)?;
            let truth = noise_from(&a.noise, data.k(), None)?;
            let error = truth.as_ref().map(|t| matrix_error(&est, t)).transpose()?;
            if let Some(out) = &a.out {
                write_estimate(out, &est, &cfg, truth.as_ref())?;
            }
            let k = est.k();
            let rows: Vec<Vec<f64>> = (1..=k).map(|i| (1..=k).map(|j| est.entry(i, j)).collect()).collect();
            print_json(json!({
                "matrix": rows,
                "head_accuracy": head.accuracy(&data)?,
                "max_abs_error": error.map(|e| e.0),
                "frobenius_error": error.map(|e| e.1),
                "condition_number": est.diagnostics().map(|d| d.condition_number),
                "out": a.out,
            }));
        }
        Command::Evaluate(a) => {
            let model = OrdinalModel::load(&a.model)?;
            let k = a.data.k.unwrap_or(model.k());
            let path = a.data.data.as_ref().ok_or_else(|| Error::ConfigInvalid("--data is required".into()))?;
            let data = load_path(path, &a.data, k)?;
            let m = evaluate(&model, &data)?;
            print_json(json!({"rows": data.len(), "mae": m.mae, "zero_one": m.zero_one}));
        }
        Command::Experiment(a) => {
            let mut plan = build_plan(&a.plan)?;
            plan.variants.retain(|v| {
                a.loss.is_none_or(|l| v.loss == BaseLoss::from(l))
                    && a.correction.is_none_or(|c| v.correction == Correction::from(c))
            });
            plan.clean_condition = !a.no_clean;
            plan.output = a.out.clone();
            if a.tune {
                let g = grid_search(&plan, BaseLoss::Ce, &[0.001, 0.003, 0.01], &[16, 64, 128])?;
                log::info!("tuned lr={} hidden={} (cv mae {:.4})", g.learning_rate, g.hidden, g.score);
                plan.train.learning_rate = g.learning_rate;
                plan.train.hidden_sizes = vec![g.hidden];
                plan.estimation.hidden_sizes = vec![g.hidden];
            }
            let report = run_experiment(&plan)?;
            print_out(&report.to_table());
            if !report.failed.is_empty() {
                eprintln!("{} trial(s) failed", report.failed.len());
            }
        }
        Command::GridSearch(a) => {
            let plan = build_plan(&a.plan)?;
            let g = grid_search(&plan, a.loss.into(), &a.lr_grid, &a.hidden_grid)?;
            let v = json!(g);
            if let Some(out) = &a.out {
                fs::write(out, serde_json::to_string_pretty(&v).expect("json")).map_err(|e| Error::Io {
                    path: out.clone(),
                    source: e,
                })?;
            }
            print_json(v);
        }
    }
    Ok(())
}

/// Splices `--key value` pairs from a config file in front of the
/// subcommand's own flags so that explicit flags take precedence.
fn expand_config(args: Vec<String>) -> Result<Vec<String>> {
    let Some(pos) = args.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(args);
    };
    let (path, consumed) = match args[pos].split_once('=') {
        Some((_, p)) => (p.to_string(), 1),
        None => (
            args.get(pos + 1)
                .cloned()
                .ok_or_else(|| Error::ConfigInvalid("--config needs a path".into()))?,
            2,
        ),
    };
    let text = fs::read_to_string(&path).map_err(|e| Error::Io {
        path: PathBuf::from(&path),
        source: e,
    })?;
    let mut rest: Vec<String> = args[..pos].iter().chain(&args[pos + consumed..]).cloned().collect();
    let sub = rest
        .iter()
        .skip(1)
        .position(|a| !a.starts_with('-'))
        .map(|i| i + 1)
        .ok_or_else(|| Error::ConfigInvalid("--config given without a subcommand".into()))?;
    let mut injected = Vec::new();
    for (key, value) in parse_config_text(&text)? {
        let flag = format!("--{}", key.replace('_', "-"));
        match value.as_str() {
            "true" => injected.push(flag),
            "false" => {}
            _ => {
                injected.push(flag);
                injected.push(value);
            }
        }
    }
    rest.splice(sub + 1..sub + 1, injected);
    Ok(rest)
}

fn fail(e: &Error) -> ExitCode {
    let body = json!({"error": e.kind(), "message": e.to_string()});
    let _ = writeln!(std::io::stderr(), "{body}");
    ExitCode::from(1)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => return fail(&e),
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let body = json!({"error": "Usage", "message": e.to_string()});
            let _ = writeln!(std::io::stderr(), "{body}");
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
