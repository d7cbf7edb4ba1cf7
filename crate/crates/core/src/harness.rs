//! Multi-trial experiment protocol, grid search and report emission.
//!
//! A trial splits the data 80/20, standardises, corrupts the training labels
//! and trains every variant from the same initial weights and shuffling
//! stream. Each variant is trained twice: once on clean training labels and
//! once on corrupted ones.
//!
//! Report columns:
//! - `clean`: trained on clean labels, scored on clean test labels.
//! - `noisy`: trained on noisy labels, scored on clean test labels.
//! - `noisy-labels`: trained on noisy labels, scored on a corrupted copy of
//!   the test labels.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{
    generate_synth, kfold_indices, load_csv_with_extra, split_indices, standardize, LabelColumn, OrdinalDataset,
    SynthSpec,
};
use crate::error::{Error, Result};
use crate::losses::{BaseLoss, LossSpec};
use crate::netcore::Activation;
use crate::noise_estimation::{estimate_matrix, matrix_error, train_multiclass, EstimationConfig};
use crate::noise_model::NoiseMatrix;
use crate::ordinal_model::{train, OrdinalModel, RankLog, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub mae: f64,
    pub zero_one: f64,
}

pub fn metrics_from_predictions(predictions: &[usize], labels: &[usize]) -> Result<Metrics> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: predictions.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = labels.len() as f64;
    let (mut abs, mut wrong) = (0usize, 0usize);
    for (&p, &y) in predictions.iter().zip(labels) {
        abs += p.abs_diff(y);
        wrong += usize::from(p != y);
    }
    Ok(Metrics {
        mae: abs as f64 / n,
        zero_one: wrong as f64 / n,
    })
}

pub fn evaluate(model: &OrdinalModel, data: &OrdinalDataset) -> Result<Metrics> {
    metrics_from_predictions(&model.predict_all(data)?, data.labels())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Correction {
    None,
    Known,
    Estimated,
}

impl Correction {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "known" | "kr" => Ok(Self::Known),
            "estimated" | "est" => Ok(Self::Estimated),
            other => Err(Error::ConfigInvalid(format!("unknown correction '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub loss: BaseLoss,
    pub correction: Correction,
}

impl Variant {
    pub fn new(loss: BaseLoss, correction: Correction) -> Self {
        Self { loss, correction }
    }

    /// The six models of the standard protocol.
    pub fn all() -> Vec<Variant> {
        [BaseLoss::Ce, BaseLoss::Imc]
            .into_iter()
            .flat_map(|l| {
                [Correction::None, Correction::Known, Correction::Estimated]
                    .into_iter()
                    .map(move |c| Variant::new(l, c))
            })
            .collect()
    }

    /// `ce`, `ce-kr`, `ce-est`, `imc`, ...
    pub fn id(&self) -> String {
        let base = self.loss.name();
        match self.correction {
            Correction::None => base.to_string(),
            Correction::Known => format!("{base}-kr"),
            Correction::Estimated => format!("{base}-est"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Column {
    Clean,
    Noisy,
    NoisyLabels,
}

impl Column {
    pub const ALL: [Column; 3] = [Column::Clean, Column::Noisy, Column::NoisyLabels];

    pub fn name(self) -> &'static str {
        match self {
            Column::Clean => "clean",
            Column::Noisy => "noisy",
            Column::NoisyLabels => "noisy-labels",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedPurpose {
    Split = 1,
    CorruptTrain = 2,
    CorruptTest = 3,
    Init = 4,
    Estimate = 5,
    Folds = 6,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sub-seed keyed by (master, trial, purpose). Variants of one trial share
/// keys, so every variant sees the same split, noise, init and shuffling.
pub fn derive_seed(master: u64, trial: usize, purpose: SeedPurpose) -> u64 {
    splitmix(splitmix(splitmix(master) ^ trial as u64) ^ purpose as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synth(SynthSpec),
    Csv {
        path: PathBuf,
        label_column: LabelColumn,
        k: usize,
        /// Columns excluded from the features.
        drop_columns: Vec<String>,
    },
}

impl DataSource {
    pub fn load(&self) -> Result<OrdinalDataset> {
        match self {
            DataSource::Synth(spec) => generate_synth(spec),
            DataSource::Csv {
                path,
                label_column,
                k,
                drop_columns,
            } => {
                let names: Vec<&str> = drop_columns.iter().map(String::as_str).collect();
                load_csv_with_extra(path, label_column, &names, *k).map(|(d, _)| d)
            }
        }
    }
}

/// Hyperparameters shared by every variant.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
}

impl TrainSettings {
    pub fn synth_default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 300,
            batch_size: 32,
            weight_decay: 0.01,
            hidden_sizes: vec![16],
            activation: Activation::Linear,
        }
    }

    pub fn csv_default() -> Self {
        Self {
            activation: Activation::Relu,
            ..Self::synth_default()
        }
    }

    pub fn config(&self, loss: LossSpec, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            weight_decay: self.weight_decay,
            seed,
            loss,
            hidden_sizes: self.hidden_sizes.clone(),
            activation: self.activation,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub dataset_name: String,
    pub source: DataSource,
    /// True transition matrix; must be inverted.
    pub noise: NoiseMatrix,
    pub trials: usize,
    pub master_seed: u64,
    pub variants: Vec<Variant>,
    pub train: TrainSettings,
    /// Its `seed` is replaced per trial.
    pub estimation: EstimationConfig,
    pub train_fraction: f64,
    /// Also train every variant on clean labels for the `clean` column.
    pub clean_condition: bool,
    pub output: Option<PathBuf>,
}

impl ExperimentPlan {
    pub fn new(dataset_name: &str, source: DataSource, noise: NoiseMatrix) -> Self {
        let train = match source {
            DataSource::Synth(_) => TrainSettings::synth_default(),
            DataSource::Csv { .. } => TrainSettings::csv_default(),
        };
        let estimation = EstimationConfig {
            hidden_sizes: train.hidden_sizes.clone(),
            epochs: train.epochs,
            batch_size: train.batch_size,
            ..EstimationConfig::default()
        };
        Self {
            dataset_name: dataset_name.to_string(),
            source,
            noise,
            trials: 20,
            master_seed: 0,
            variants: Variant::all(),
            train,
            estimation,
            train_fraction: 0.8,
            clean_condition: true,
            output: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::ConfigInvalid("trials must be >= 1".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::ConfigInvalid("no variants requested".into()));
        }
        if self.noise.inverse().is_none()
            && self.variants.iter().any(|v| v.correction == Correction::Known)
        {
            return Err(Error::InverseMissing);
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::ConfigInvalid("train fraction must be in (0, 1)".into()));
        }
        self.train.config(LossSpec::plain(BaseLoss::Ce), 0).validate()?;
        self.estimation.validate()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialSeeds {
    pub split: u64,
    pub corrupt_train: u64,
    pub corrupt_test: u64,
    pub init: u64,
    pub estimate: u64,
}

impl TrialSeeds {
    pub fn derive(master: u64, trial: usize) -> Self {
        Self {
            split: derive_seed(master, trial, SeedPurpose::Split),
            corrupt_train: derive_seed(master, trial, SeedPurpose::CorruptTrain),
            corrupt_test: derive_seed(master, trial, SeedPurpose::CorruptTest),
            init: derive_seed(master, trial, SeedPurpose::Init),
            estimate: derive_seed(master, trial, SeedPurpose::Estimate),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantResult {
    pub variant: String,
    pub clean: Option<Metrics>,
    pub noisy: Metrics,
    pub noisy_labels: Metrics,
    pub rank_log_noisy: RankSnapshot,
    pub rank_log_clean: Option<RankSnapshot>,
    pub final_loss_noisy: f64,
}

impl VariantResult {
    pub fn column(&self, c: Column) -> Option<Metrics> {
        match c {
            Column::Clean => self.clean,
            Column::Noisy => Some(self.noisy),
            Column::NoisyLabels => Some(self.noisy_labels),
        }
    }
}

/// Serializable copy of a [`RankLog`].
#[derive(Debug, Clone, Serialize)]
pub struct RankSnapshot {
    pub total_updates: u64,
    pub unordered_updates: u64,
    pub first_unordered_update: Option<u64>,
    pub final_ordered: bool,
}

impl From<&RankLog> for RankSnapshot {
    fn from(l: &RankLog) -> Self {
        Self {
            total_updates: l.total_updates,
            unordered_updates: l.unordered_updates,
            first_unordered_update: l.first_unordered_update,
            final_ordered: l.final_ordered,
        }
    }
}

impl From<&RankSnapshot> for RankLog {
    fn from(s: &RankSnapshot) -> Self {
        Self {
            total_updates: s.total_updates,
            unordered_updates: s.unordered_updates,
            first_unordered_update: s.first_unordered_update,
            final_ordered: s.final_ordered,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialReport {
    pub trial: usize,
    pub seeds: TrialSeeds,
    pub results: Vec<VariantResult>,
    /// `(max_abs, frobenius)` of the estimate from noisy training labels.
    pub estimate_error: Option<(f64, f64)>,
    pub estimated_matrix: Option<Vec<Vec<f64>>>,
    #[serde(skip)]
    pub wall_time: Duration,
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub variant: String,
    pub column: Column,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub zero_one_mean: f64,
    pub zero_one_std: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct FailedTrial {
    pub trial: usize,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub dataset: String,
    pub trials_requested: usize,
    pub master_seed: u64,
    pub completed: Vec<TrialReport>,
    pub failed: Vec<FailedTrial>,
    pub summary: Vec<SummaryRow>,
    pub rank: Vec<(String, RankSummary)>,
    pub estimate_error_mean: Option<(f64, f64)>,
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

struct TrialData {
    train_clean: OrdinalDataset,
    train_noisy: OrdinalDataset,
    test_clean: OrdinalDataset,
    test_noisy: OrdinalDataset,
}

fn prepare_trial(plan: &ExperimentPlan, full: &OrdinalDataset, seeds: &TrialSeeds) -> Result<TrialData> {
    let (tr, te) = split_indices(full.len(), plan.train_fraction, seeds.split)?;
    let (train_clean, others) = standardize(&full.subset(&tr), &[&full.subset(&te)])?;
    let test_clean = others.into_iter().next().expect("one other");
    let train_noisy = train_clean.with_labels(plan.noise.corrupt_labels(train_clean.labels(), seeds.corrupt_train)?)?;
    let test_noisy = test_clean.with_labels(plan.noise.corrupt_labels(test_clean.labels(), seeds.corrupt_test)?)?;
    Ok(TrialData {
        train_clean,
        train_noisy,
        test_clean,
        test_noisy,
    })
}

fn estimate_for(
    plan: &ExperimentPlan,
    train: &OrdinalDataset,
    seed: u64,
) -> Result<NoiseMatrix> {
    let cfg = EstimationConfig {
        seed,
        ..plan.estimation.clone()
    };
    let head = train_multiclass(train, &cfg)?;
    estimate_matrix(&head, train, &cfg)
}

fn loss_for(variant: Variant, known: &NoiseMatrix, estimated: Option<&NoiseMatrix>) -> Result<LossSpec> {
    let inverse = match variant.correction {
        Correction::None => return Ok(LossSpec::plain(variant.loss)),
        Correction::Known => known.inverse(),
        Correction::Estimated => estimated.and_then(NoiseMatrix::inverse),
    };
    LossSpec::corrected(variant.loss, inverse.ok_or(Error::CorrectionMissing)?.clone())
}

pub fn run_trial(plan: &ExperimentPlan, full: &OrdinalDataset, trial: usize) -> Result<TrialReport> {
    let start = Instant::now();
    let seeds = TrialSeeds::derive(plan.master_seed, trial);
    let d = prepare_trial(plan, full, &seeds)?;
    let k = full.k();
    let needs_est = plan.variants.iter().any(|v| v.correction == Correction::Estimated);

    let est_noisy = if needs_est {
        Some(estimate_for(plan, &d.train_noisy, seeds.estimate)?)
    } else {
        None
    };
    let est_clean = if needs_est && plan.clean_condition {
        Some(estimate_for(plan, &d.train_clean, seeds.estimate)?)
    } else {
        None
    };
    let identity = NoiseMatrix::identity(k).invert()?;

    let mut results = Vec::with_capacity(plan.variants.len());
    for &variant in &plan.variants {
        let cfg = plan.train.config(loss_for(variant, &plan.noise, est_noisy.as_ref())?, seeds.init);
        let model = cfg.init_model(full.dim(), k)?;
        let out = train(model, &d.train_noisy, &cfg)?;
        let noisy = evaluate(&out.model, &d.test_clean)?;
        let noisy_labels = evaluate(&out.model, &d.test_noisy)?;

        let (clean, rank_log_clean) = if plan.clean_condition {
            let cfg = plan.train.config(loss_for(variant, &identity, est_clean.as_ref())?, seeds.init);
            let model = cfg.init_model(full.dim(), k)?;
            let out = train(model, &d.train_clean, &cfg)?;
            (
                Some(evaluate(&out.model, &d.test_clean)?),
                Some(RankSnapshot::from(&out.rank_log)),
            )
        } else {
            (None, None)
        };

        results.push(VariantResult {
            variant: variant.id(),
            clean,
            noisy,
            noisy_labels,
            rank_log_noisy: RankSnapshot::from(&out.rank_log),
            rank_log_clean,
            final_loss_noisy: out.loss_curve.last().copied().unwrap_or(f64::NAN),
        });
    }

    let estimate_error = est_noisy.as_ref().map(|e| matrix_error(e, &plan.noise)).transpose()?;
    Ok(TrialReport {
        trial,
        seeds,
        results,
        estimate_error,
        estimated_matrix: est_noisy.map(|e| e.entries().to_rows()),
        wall_time: start.elapsed(),
    })
}

pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    plan.validate()?;
    let full = plan.source.load()?;
    if full.k() != plan.noise.k() {
        return Err(Error::DimensionMismatch {
            expected: full.k(),
            got: plan.noise.k(),
        });
    }
    let outcomes: Vec<Result<TrialReport>> = (0..plan.trials)
        .into_par_iter()
        .map(|t| run_trial(plan, &full, t))
        .collect();

    let mut completed = Vec::new();
    let mut failed = Vec::new();
    for (trial, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => {
                log::info!("trial {trial} finished in {:.1}s", r.wall_time.as_secs_f64());
                completed.push(r);
            }
            Err(e) => {
                log::warn!("trial {trial} failed: {e}");
                failed.push(FailedTrial {
                    trial,
                    kind: e.kind().to_string(),
                    message: e.to_string(),
                });
            }
        }
    }

    let mut summary = Vec::new();
    let mut rank = Vec::new();
    for v in &plan.variants {
        let id = v.id();
        let rows: Vec<&VariantResult> = completed
            .iter()
            .flat_map(|t| t.results.iter().filter(|r| r.variant == id))
            .collect();
        for c in Column::ALL {
            let ms: Vec<Metrics> = rows.iter().filter_map(|r| r.column(c)).collect();
            if ms.is_empty() {
                continue;
            }
            let (mae_mean, mae_std) = mean_std(&ms.iter().map(|m| m.mae).collect::<Vec<_>>());
            let (zo_mean, zo_std) = mean_std(&ms.iter().map(|m| m.zero_one).collect::<Vec<_>>());
            summary.push(SummaryRow {
                variant: id.clone(),
                column: c,
                mae_mean,
                mae_std,
                zero_one_mean: zo_mean,
                zero_one_std: zo_std,
                trials: ms.len(),
            });
        }
        let logs: Vec<RankLog> = rows.iter().map(|r| RankLog::from(&r.rank_log_noisy)).collect();
        if let Ok(s) = rank_report(&logs) {
            rank.push((id, s));
        }
    }

    let errs: Vec<(f64, f64)> = completed.iter().filter_map(|t| t.estimate_error).collect();
    let estimate_error_mean = (!errs.is_empty()).then(|| {
        (
            mean_std(&errs.iter().map(|e| e.0).collect::<Vec<_>>()).0,
            mean_std(&errs.iter().map(|e| e.1).collect::<Vec<_>>()).0,
        )
    });

    let report = ExperimentReport {
        dataset: plan.dataset_name.clone(),
        trials_requested: plan.trials,
        master_seed: plan.master_seed,
        completed,
        failed,
        summary,
        rank,
        estimate_error_mean,
    };
    if let Some(out) = &plan.output {
        write_report(&report, out)?;
    }
    Ok(report)
}

impl ExperimentReport {
    pub fn row(&self, variant: &str, column: Column) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|r| r.variant == variant && r.column == column)
    }

    pub fn all_rank_logs(&self) -> Vec<RankLog> {
        self.completed
            .iter()
            .flat_map(|t| t.results.iter())
            .flat_map(|r| std::iter::once(&r.rank_log_noisy).chain(r.rank_log_clean.as_ref()))
            .map(RankLog::from)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,variant,column,mae_mean,mae_std,zero_one_mean,zero_one_std,trials\n");
        for r in &self.summary {
            writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{}",
                self.dataset,
                r.variant,
                r.column.name(),
                r.mae_mean,
                r.mae_std,
                r.zero_one_mean,
                r.zero_one_std,
                r.trials
            )
            .unwrap();
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "dataset {}  seed {}  trials {}/{} completed",
            self.dataset,
            self.master_seed,
            self.completed.len(),
            self.trials_requested
        )
        .unwrap();
        writeln!(
            out,
            "columns: clean = clean train / clean test; noisy = noisy train / clean test; noisy-labels = noisy train / noisy test\n"
        )
        .unwrap();
        let mut header = format!("{:<10}", "variant");
        for metric in ["MAE", "0-1"] {
            for c in Column::ALL {
                write!(header, " | {:>17}", format!("{metric} {}", c.name())).unwrap();
            }
        }
        writeln!(out, "{header}").unwrap();
        writeln!(out, "{}", "-".repeat(header.len())).unwrap();
        let mut variants: Vec<&str> = Vec::new();
        for r in &self.summary {
            if !variants.contains(&r.variant.as_str()) {
                variants.push(&r.variant);
            }
        }
        for v in variants {
            let mut line = format!("{v:<10}");
            for pick in [true, false] {
                for c in Column::ALL {
                    let cell = self.row(v, c).map_or("-".to_string(), |r| {
                        if pick {
                            format!("{:.3} ± {:.3}", r.mae_mean, r.mae_std)
                        } else {
                            format!("{:.3} ± {:.3}", r.zero_one_mean, r.zero_one_std)
                        }
                    });
                    write!(line, " | {cell:>17}").unwrap();
                }
            }
            writeln!(out, "{line}").unwrap();
        }
        writeln!(out, "\nunordered updates / total updates (noisy training)").unwrap();
        for (v, s) in &self.rank {
            writeln!(out, "  {v:<10} {}", s.text).unwrap();
        }
        if let Some((max_abs, fro)) = self.estimate_error_mean {
            writeln!(out, "\nestimated matrix error (mean): max_abs {max_abs:.4}  frobenius {fro:.4}").unwrap();
        }
        if !self.failed.is_empty() {
            writeln!(out, "\nfailed trials:").unwrap();
            for f in &self.failed {
                writeln!(out, "  trial {} [{}] {}", f.trial, f.kind, f.message).unwrap();
            }
        }
        out
    }
}

/// Writes `<out>` (CSV summary), `<out>.txt` (table) and `<out>.json`
/// (per-trial detail). Wall times are left out so reruns are byte-identical.
pub fn write_report(report: &ExperimentReport, out: &Path) -> Result<()> {
    let with_suffix = |s: &str| {
        let mut p = out.as_os_str().to_os_string();
        p.push(s);
        PathBuf::from(p)
    };
    fs::write(out, report.to_csv()).map_err(|e| Error::io(out, e))?;
    let txt = with_suffix(".txt");
    fs::write(&txt, report.to_table()).map_err(|e| Error::io(&txt, e))?;
    let json = with_suffix(".json");
    let body = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(&json, body).map_err(|e| Error::io(&json, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankSummary {
    pub mean_unordered: f64,
    pub mean_total: f64,
    pub runs: usize,
    pub runs_final_unordered: usize,
    pub text: String,
}

pub fn rank_report(logs: &[RankLog]) -> Result<RankSummary> {
    if logs.is_empty() {
        return Err(Error::EmptyInput("no rank logs".into()));
    }
    let n = logs.len() as f64;
    let mean_unordered = logs.iter().map(|l| l.unordered_updates as f64).sum::<f64>() / n;
    let mean_total = logs.iter().map(|l| l.total_updates as f64).sum::<f64>() / n;
    let bad = logs.iter().filter(|l| !l.final_ordered).count();
    let mut text = format!("{mean_unordered:.1} / {mean_total:.0}");
    if bad > 0 {
        write!(text, "  !! FINAL THRESHOLDS UNORDERED IN {bad} OF {} RUNS !!", logs.len()).unwrap();
    }
    Ok(RankSummary {
        mean_unordered,
        mean_total,
        runs: logs.len(),
        runs_final_unordered: bad,
        text,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub learning_rate: f64,
    pub hidden: usize,
    /// Mean 5-fold validation MAE against noisy labels; `None` if excluded.
    pub score: Option<f64>,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    pub learning_rate: f64,
    pub hidden: usize,
    pub score: f64,
    pub cells: Vec<GridCell>,
}

pub const CV_FOLDS: usize = 5;

/// 5-fold CV over `lr_grid x hidden_grid` on the first trial's noisy
/// training split, scored by validation MAE against noisy labels with the
/// uncorrected `loss`.
pub fn grid_search(
    plan: &ExperimentPlan,
    loss: BaseLoss,
    lr_grid: &[f64],
    hidden_grid: &[usize],
) -> Result<GridResult> {
    if lr_grid.is_empty() || hidden_grid.is_empty() {
        return Err(Error::EmptyInput("grid search needs non-empty grids".into()));
    }
    let full = plan.source.load()?;
    let seeds = TrialSeeds::derive(plan.master_seed, 0);
    let (tr, _) = split_indices(full.len(), plan.train_fraction, seeds.split)?;
    let pool = full.subset(&tr);
    let pool = pool.with_labels(plan.noise.corrupt_labels(pool.labels(), seeds.corrupt_train)?)?;
    let folds = kfold_indices(pool.len(), CV_FOLDS, derive_seed(plan.master_seed, 0, SeedPurpose::Folds))?;

    let mut cells_in = Vec::new();
    for &hidden in hidden_grid {
        for &lr in lr_grid {
            cells_in.push((hidden, lr));
        }
    }
    let cells: Vec<GridCell> = cells_in
        .par_iter()
        .map(|&(hidden, lr)| {
            let settings = TrainSettings {
                learning_rate: lr,
                hidden_sizes: vec![hidden],
                ..plan.train.clone()
            };
            let score = folds
                .iter()
                .map(|(fit, val)| {
                    let (fit, val) = standardize(&pool.subset(fit), &[&pool.subset(val)])?;
                    let cfg = settings.config(LossSpec::plain(loss), seeds.init);
                    let out = train(cfg.init_model(pool.dim(), pool.k())?, &fit, &cfg)?;
                    Ok(evaluate(&out.model, &val[0])?.mae)
                })
                .collect::<Result<Vec<f64>>>()
                .map(|v| mean_std(&v).0);
            match score {
                Ok(s) if s.is_finite() => GridCell {
                    learning_rate: lr,
                    hidden,
                    score: Some(s),
                    diagnostic: None,
                },
                Ok(s) => GridCell {
                    learning_rate: lr,
                    hidden,
                    score: None,
                    diagnostic: Some(format!("non-finite score {s}")),
                },
                Err(e) => {
                    log::warn!("grid cell lr={lr} hidden={hidden} excluded: {e}");
                    GridCell {
                        learning_rate: lr,
                        hidden,
                        score: None,
                        diagnostic: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    best_cell(cells)
}

/// Lowest score; ties go to the smaller hidden size, then the smaller lr.
pub fn best_cell(cells: Vec<GridCell>) -> Result<GridResult> {
    let best = cells
        .iter()
        .filter_map(|c| c.score.map(|s| (s, c.hidden, c.learning_rate)))
        .min_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then(a.1.cmp(&b.1))
                .then(a.2.total_cmp(&b.2))
        })
        .ok_or_else(|| Error::EmptyInput("every grid cell failed".into()))?;
    Ok(GridResult {
        learning_rate: best.2,
        hidden: best.1,
        score: best.0,
        cells,
    })
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::ConfigInvalid(format!("line {}: expected key = value", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::ConfigInvalid(format!("line {}: empty key", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}
