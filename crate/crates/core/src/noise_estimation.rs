//! Transition-matrix estimation from noisy labels: fit a softmax classifier,
//! pick a high-percentile anchor sample per class and read its posterior
//! as that class's row.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::OrdinalDataset;
use crate::error::{Error, Result};
use crate::linalg::SquareMatrix;
use crate::netcore::{Activation, AdamWConfig, DenseNet, ForwardCache, GradientBundle, OptimizerState};
use crate::noise_model::NoiseMatrix;

/// Anchors whose best posterior falls below this carry no usable signal.
pub const MIN_ANCHOR_POSTERIOR: f64 = 1e-6;

/// Anything that yields `p(noisy label | x)` over `K` classes.
pub trait ClassPosterior {
    fn num_classes(&self) -> usize;
    /// Writes the K probabilities for `x` into `out`.
    fn posterior_into(&self, x: &[f64], out: &mut [f64]) -> Result<()>;
}

/// In-place numerically stable softmax.
pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassHead {
    feature_net: DenseNet,
}

impl MulticlassHead {
    pub fn new(feature_net: DenseNet) -> Result<Self> {
        if feature_net.output_dim() < 2 {
            return Err(Error::KInvalid(feature_net.output_dim()));
        }
        Ok(Self { feature_net })
    }

    pub fn feature_net(&self) -> &DenseNet {
        &self.feature_net
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.num_classes()];
        self.posterior_into(x, &mut out)?;
        Ok(out)
    }

    pub fn accuracy(&self, data: &OrdinalDataset) -> Result<f64> {
        let mut p = vec![0.0; self.num_classes()];
        let mut hits = 0usize;
        for (x, &y) in data.rows().zip(data.labels()) {
            self.posterior_into(x, &mut p)?;
            let best = p
                .iter()
                .enumerate()
                .fold(0, |best, (j, &v)| if v > p[best] { j } else { best });
            hits += usize::from(best + 1 == y);
        }
        Ok(hits as f64 / data.len().max(1) as f64)
    }
}

impl ClassPosterior for MulticlassHead {
    fn num_classes(&self) -> usize {
        self.feature_net.output_dim()
    }

    fn posterior_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let mut cache = ForwardCache::default();
        self.feature_net.forward_into(x, &mut cache)?;
        out.copy_from_slice(cache.output());
        softmax_in_place(out);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepairMode {
    RowNormalizeOnly,
    ClipThenNormalize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationConfig {
    pub percentile: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
    pub repair: RepairMode,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            percentile: 99.0,
            learning_rate: 0.003,
            epochs: 300,
            batch_size: 32,
            weight_decay: 0.01,
            hidden_sizes: vec![16],
            activation: Activation::Relu,
            seed: 0,
            repair: RepairMode::RowNormalizeOnly,
        }
    }
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.percentile > 0.0 && self.percentile <= 100.0) {
            return Err(Error::ConfigInvalid(format!(
                "percentile must be in (0, 100], got {}",
                self.percentile
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::ConfigInvalid("epochs and batch size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::ConfigInvalid("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Softmax cross-entropy training with mini-batch AdamW.
pub fn train_multiclass(data: &OrdinalDataset, config: &EstimationConfig) -> Result<MulticlassHead> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let k = data.k();
    let mut net = DenseNet::with_seed(data.dim(), &config.hidden_sizes, k, config.activation, config.seed)?;
    let adam = AdamWConfig::new(config.learning_rate).with_weight_decay(config.weight_decay);
    let mut opt = OptimizerState::for_net(&net, adam);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.rotate_left(17) ^ 0x9e37_79b9);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads = GradientBundle::zeros_like(&net);
    let mut cache = ForwardCache::default();
    let mut scratch = Vec::new();
    let mut delta = vec![0.0; k];
    let mut updates = 0usize;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            grads.reset();
            let mut batch_loss = 0.0;
            for &i in batch {
                net.forward_into(data.row(i), &mut cache)?;
                delta.copy_from_slice(cache.output());
                softmax_in_place(&mut delta);
                let y = data.labels()[i] - 1;
                batch_loss -= delta[y].max(f64::MIN_POSITIVE).ln();
                delta[y] -= 1.0;
                net.backward_accumulate(&cache, &delta, &mut grads, &mut scratch)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    update: updates,
                    detail: format!("multiclass batch loss {batch_loss}"),
                });
            }
            grads.scale(1.0 / batch.len() as f64);
            opt.begin_step();
            opt.update_net(&mut net, &grads, 0)?;
            updates += 1;
        }
    }
    MulticlassHead::new(net)
}

/// Index of the sample at the `percentile`-th nearest rank of `scores`;
/// among equal scores the lowest index wins.
pub fn percentile_anchor(scores: &[f64], percentile: f64) -> Option<usize> {
    if scores.is_empty() {
        return None;
    }
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((percentile / 100.0) * n as f64).ceil().clamp(1.0, n as f64) as usize;
    let value = sorted[rank - 1];
    scores.iter().position(|&s| s == value)
}

/// Per-class anchors and the raw posterior rows they produced.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorReport {
    pub anchors: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
}

pub fn find_anchors<H: ClassPosterior + ?Sized>(
    head: &H,
    data: &OrdinalDataset,
    percentile: f64,
) -> Result<AnchorReport> {
    let k = head.num_classes();
    if k != data.k() {
        return Err(Error::DimensionMismatch {
            expected: data.k(),
            got: k,
        });
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = data.len();
    let mut post = vec![0.0; n * k];
    for (i, x) in data.rows().enumerate() {
        head.posterior_into(x, &mut post[i * k..(i + 1) * k])?;
    }
    let mut anchors = Vec::with_capacity(k);
    let mut rows = Vec::with_capacity(k);
    for class in 0..k {
        let scores: Vec<f64> = (0..n).map(|i| post[i * k + class]).collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max.is_nan() || max < MIN_ANCHOR_POSTERIOR {
            return Err(Error::EmptyClassSupport {
                class: class + 1,
                max_posterior: max,
            });
        }
        let a = percentile_anchor(&scores, percentile).expect("non-empty");
        anchors.push(a);
        rows.push(post[a * k..(a + 1) * k].to_vec());
    }
    Ok(AnchorReport { anchors, rows })
}

fn repair_rows(rows: &mut [Vec<f64>], mode: RepairMode) -> Result<()> {
    for (i, row) in rows.iter_mut().enumerate() {
        if mode == RepairMode::ClipThenNormalize {
            row.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::SingularEstimate(format!(
                "row {} has invalid entries {row:?}",
                i + 1
            )));
        }
        let s: f64 = row.iter().sum();
        if s.is_nan() || s <= 0.0 {
            return Err(Error::SingularEstimate(format!("row {} sums to {s}", i + 1)));
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    Ok(())
}

/// Anchor-based estimate of the transition matrix, inverted.
pub fn estimate_matrix<H: ClassPosterior + ?Sized>(
    head: &H,
    data: &OrdinalDataset,
    config: &EstimationConfig,
) -> Result<NoiseMatrix> {
    if !(config.percentile > 0.0 && config.percentile <= 100.0) {
        return Err(Error::ConfigInvalid(format!(
            "percentile must be in (0, 100], got {}",
            config.percentile
        )));
    }
    let mut report = find_anchors(head, data, config.percentile)?;
    repair_rows(&mut report.rows, config.repair)?;
    let entries = SquareMatrix::from_rows(&report.rows)?;
    let matrix = NoiseMatrix::from_explicit(entries).map_err(|e| Error::SingularEstimate(e.to_string()))?;
    matrix.invert().map_err(|e| match e {
        Error::SingularMatrix { condition, cap } => Error::SingularEstimate(format!(
            "estimated matrix has condition number {condition:.3e} (cap {cap:.0e})"
        )),
        other => other,
    })
}

/// `(max |A - B|, ||A - B||_F)` over entries.
pub fn matrix_error(estimate: &NoiseMatrix, truth: &NoiseMatrix) -> Result<(f64, f64)> {
    if estimate.k() != truth.k() {
        return Err(Error::DimensionMismatch {
            expected: truth.k(),
            got: estimate.k(),
        });
    }
    let (mut max_abs, mut sq) = (0.0f64, 0.0);
    for (a, b) in estimate.entries().as_slice().iter().zip(truth.entries().as_slice()) {
        let d = (a - b).abs();
        max_abs = max_abs.max(d);
        sq += d * d;
    }
    Ok((max_abs, sq.sqrt()))
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".meta");
    PathBuf::from(s)
}

/// Writes the matrix plus a one-line `<path>.meta` sidecar.
pub fn write_estimate(
    path: &Path,
    estimate: &NoiseMatrix,
    config: &EstimationConfig,
    truth: Option<&NoiseMatrix>,
) -> Result<()> {
    estimate.write_to(path)?;
    let mut line = format!("percentile={} seed={}", config.percentile, config.seed);
    if let Some(t) = truth {
        let (max_abs, fro) = matrix_error(estimate, t)?;
        write!(line, " max_abs={max_abs:.6} frobenius={fro:.6}").unwrap();
    }
    line.push('\n');
    let meta = meta_path(path);
    fs::write(&meta, line).map_err(|e| Error::io(meta, e))
}
