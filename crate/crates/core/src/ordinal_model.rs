//! Threshold ordinal predictor: a scalar-output network `g(x)` and `K - 1`
//! thresholds, predicting `1 + #{k : g(x) + b_k > 0}`.
//!
//! Training runs mini-batch AdamW over the network and the thresholds. The
//! thresholds are never re-sorted; after every update their ordering is
//! checked and recorded in a [`RankLog`].

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::OrdinalDataset;
use crate::error::{Error, Result};
use crate::losses::{LossSpec, PreparedLoss, Thresholds};
use crate::netcore::{
    field, join_floats, parse_floats, Activation, AdamWConfig, DenseNet, ForwardCache,
    GradientBundle, OptimizerState,
};
use crate::noise_model::NoiseMatrix;

/// Evenly spaced decreasing thresholds from +1 to -1 (0 when K = 2).
pub fn threshold_init(k: usize) -> Result<Thresholds> {
    if k < 2 {
        return Err(Error::KInvalid(k));
    }
    let values = if k == 2 {
        vec![0.0]
    } else {
        (0..k - 1)
            .map(|i| 1.0 - 2.0 * i as f64 / (k - 2) as f64)
            .collect()
    };
    Thresholds::new(values)
}

/// `b_1 >= b_2 >= ... >= b_{K-1}`; ties count as ordered.
pub fn thresholds_ordered(b: &[f64]) -> bool {
    b.windows(2).all(|w| w[0] >= w[1])
}

/// Rank from a score; ties at `g + b_k = 0` go to the lower class.
#[inline]
pub fn predict_from_score(g: f64, b: &[f64]) -> usize {
    1 + b.iter().filter(|&&bk| g + bk > 0.0).count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrdinalModel {
    feature_net: DenseNet,
    thresholds: Thresholds,
}

impl OrdinalModel {
    pub fn from_parts(feature_net: DenseNet, thresholds: Thresholds) -> Result<Self> {
        if feature_net.output_dim() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "feature net must have one output, has {}",
                feature_net.output_dim()
            )));
        }
        Ok(Self {
            feature_net,
            thresholds,
        })
    }

    pub fn new(
        input_dim: usize,
        k: usize,
        hidden: &[usize],
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        let net = DenseNet::with_seed(input_dim, hidden, 1, activation, seed)?;
        Self::from_parts(net, threshold_init(k)?)
    }

    pub fn k(&self) -> usize {
        self.thresholds.k()
    }

    pub fn input_dim(&self) -> usize {
        self.feature_net.input_dim()
    }

    pub fn feature_net(&self) -> &DenseNet {
        &self.feature_net
    }

    pub fn thresholds(&self) -> &Thresholds {
        &self.thresholds
    }

    pub fn thresholds_mut(&mut self) -> &mut Thresholds {
        &mut self.thresholds
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        self.feature_net.score(x, &mut ForwardCache::default())
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(predict_from_score(self.score(x)?, self.thresholds.as_slice()))
    }

    pub fn predict_all(&self, data: &OrdinalDataset) -> Result<Vec<usize>> {
        if data.dim() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: data.dim(),
            });
        }
        let mut cache = ForwardCache::default();
        data.rows()
            .map(|x| {
                let g = self.feature_net.score(x, &mut cache)?;
                Ok(predict_from_score(g, self.thresholds.as_slice()))
            })
            .collect()
    }

    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        writeln!(out, "ordinal v1").unwrap();
        writeln!(out, "K {}", self.k()).unwrap();
        writeln!(out, "thresholds {}", join_floats(self.thresholds.as_slice())).unwrap();
        out.push_str(&self.feature_net.to_checkpoint());
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::ConfigInvalid(format!("model checkpoint: {m}"));
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("ordinal v1") {
            return Err(bad("unsupported header"));
        }
        let k: usize = field(lines.next().ok_or_else(|| bad("missing K"))?, "K")?
            .trim()
            .parse()
            .map_err(|_| bad("bad K"))?;
        let b = parse_floats(field(
            lines.next().ok_or_else(|| bad("missing thresholds"))?,
            "thresholds",
        )?)?;
        if b.len() + 1 != k {
            return Err(bad("threshold count does not match K"));
        }
        let net = DenseNet::from_checkpoint_lines(&mut lines)?;
        Self::from_parts(net, Thresholds::new(b)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub loss: LossSpec,
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
}

impl TrainConfig {
    pub fn new(loss: LossSpec) -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 300,
            batch_size: 32,
            weight_decay: 0.01,
            seed: 0,
            loss,
            hidden_sizes: vec![16],
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::ConfigInvalid("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::ConfigInvalid("batch size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::ConfigInvalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::ConfigInvalid("weight decay must be >= 0".into()));
        }
        Ok(())
    }

    /// Fresh model shaped by this config, initialised from `seed`.
    pub fn init_model(&self, input_dim: usize, k: usize) -> Result<OrdinalModel> {
        OrdinalModel::new(input_dim, k, &self.hidden_sizes, self.activation, self.seed)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RankLog {
    pub total_updates: u64,
    pub unordered_updates: u64,
    pub first_unordered_update: Option<u64>,
    pub final_ordered: bool,
}

impl RankLog {
    fn record(&mut self, ordered: bool) {
        self.total_updates += 1;
        if !ordered {
            self.unordered_updates += 1;
            self.first_unordered_update.get_or_insert(self.total_updates);
        }
        self.final_ordered = ordered;
    }

    pub fn unordered_fraction(&self) -> f64 {
        if self.total_updates == 0 {
            0.0
        } else {
            self.unordered_updates as f64 / self.total_updates as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: OrdinalModel,
    pub rank_log: RankLog,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
}

const SHUFFLE_STREAM: u64 = 0x0005_eed5_u64 << 32;

pub fn train(mut model: OrdinalModel, data: &OrdinalDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            got: data.dim(),
        });
    }
    let k = model.k();
    if data.k() != k {
        return Err(Error::ConfigInvalid(format!(
            "dataset has K={}, model has K={k}",
            data.k()
        )));
    }
    let loss = PreparedLoss::new(&config.loss, k)?;

    let mut slots = OptimizerState::net_slot_sizes(&model.feature_net);
    let threshold_slot = slots.len();
    slots.push(k - 1);
    let adam = AdamWConfig::new(config.learning_rate).with_weight_decay(config.weight_decay);
    let mut opt = OptimizerState::new(adam, &slots);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads = GradientBundle::zeros_like(&model.feature_net);
    let mut cache = ForwardCache::default();
    let mut scratch = Vec::new();
    let mut d_b = vec![0.0; k - 1];
    let mut tb = vec![0.0; k - 1];
    let mut log = RankLog {
        final_ordered: thresholds_ordered(model.thresholds.as_slice()),
        ..RankLog::default()
    };
    let mut curve = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.reset();
            tb.fill(0.0);
            let mut batch_loss = 0.0;
            for &i in batch {
                let g = model.feature_net.score(data.row(i), &mut cache)?;
                let (value, d_g) = loss.eval_into(g, model.thresholds.as_slice(), data.labels()[i], &mut d_b);
                batch_loss += value;
                model
                    .feature_net
                    .backward_accumulate(&cache, &[d_g], &mut grads, &mut scratch)?;
                for (t, d) in tb.iter_mut().zip(&d_b) {
                    *t += d;
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    update: log.total_updates as usize,
                    detail: format!("batch loss {batch_loss} with {}", config.loss.name()),
                });
            }
            epoch_loss += batch_loss;
            let inv_n = 1.0 / batch.len() as f64;
            grads.scale(inv_n);
            tb.iter_mut().for_each(|t| *t *= inv_n);

            opt.begin_step();
            opt.update_net(&mut model.feature_net, &grads, 0)?;
            opt.update_slot(threshold_slot, model.thresholds.as_mut_slice(), &tb, false)?;
            if model.thresholds.as_slice().iter().any(|b| !b.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    update: log.total_updates as usize,
                    detail: "thresholds diverged".into(),
                });
            }
            log.record(thresholds_ordered(model.thresholds.as_slice()));
        }
        curve.push(epoch_loss / data.len() as f64);
    }
    Ok(TrainOutcome {
        model,
        rank_log: log,
        loss_curve: curve,
    })
}

/// Expected thresholds gaps `E[b_i' - b_{i+1}']` after one plain SGD step of
/// size `lr` on the corrected loss, with the noisy label drawn from row
/// `true_label` of `matrix`.
pub fn expected_sgd_gaps(
    spec_base: crate::losses::BaseLoss,
    g: f64,
    b: &Thresholds,
    true_label: usize,
    matrix: &NoiseMatrix,
    lr: f64,
) -> Result<Vec<f64>> {
    let inv = matrix.inverse().ok_or(Error::InverseMissing)?;
    let spec = LossSpec::corrected(spec_base, inv.clone())?;
    let k = b.k();
    crate::error::check_label(true_label, k)?;
    let mut expected = vec![0.0; k - 2];
    for noisy in 1..=k {
        let p = matrix.entry(true_label, noisy);
        let step = crate::losses::corrected_loss(&spec, g, b, noisy)?;
        let next: Vec<f64> = b
            .as_slice()
            .iter()
            .zip(&step.d_b)
            .map(|(bi, d)| bi - lr * d)
            .collect();
        for (e, w) in expected.iter_mut().zip(next.windows(2)) {
            *e += p * (w[0] - w[1]);
        }
    }
    Ok(expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::BaseLoss;
    use crate::netcore::DenseLayer;

    fn scalar_model(b: &[f64]) -> OrdinalModel {
        // g(x) = x
        let net = DenseNet::from_layers(vec![DenseLayer {
            in_dim: 1,
            out_dim: 1,
            weights: vec![1.0],
            bias: vec![0.0],
            activation: Activation::Linear,
        }])
        .unwrap();
        OrdinalModel::from_parts(net, Thresholds::new(b.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn predict_examples() {
        assert_eq!(scalar_model(&[-1.0, -2.0, -3.0]).predict(&[0.0]).unwrap(), 1);
        assert_eq!(scalar_model(&[2.0, 1.0, -1.0]).predict(&[0.0]).unwrap(), 3);
        assert_eq!(scalar_model(&[3.0, 2.0, 1.0]).predict(&[0.0]).unwrap(), 4);
        // tie goes to the lower class
        assert_eq!(scalar_model(&[0.0]).predict(&[0.0]).unwrap(), 1);
        assert!(scalar_model(&[0.0]).predict(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn ordering_examples() {
        assert!(thresholds_ordered(&[2.0, 0.0, -2.0]));
        assert!(thresholds_ordered(&[0.0, 0.0]));
        assert!(!thresholds_ordered(&[0.0, 1.0]));
    }

    #[test]
    fn init_examples() {
        assert_eq!(threshold_init(2).unwrap().as_slice(), &[0.0]);
        assert_eq!(threshold_init(3).unwrap().as_slice(), &[1.0, -1.0]);
        let b = threshold_init(5).unwrap();
        let want = [1.0, 1.0 / 3.0, -1.0 / 3.0, -1.0];
        for (v, w) in b.as_slice().iter().zip(want) {
            assert!((v - w).abs() < 1e-15);
        }
        assert!(matches!(threshold_init(1), Err(Error::KInvalid(1))));
    }

    fn separable_1d() -> OrdinalDataset {
        let xs: Vec<f64> = (0..90).map(|i| -3.0 + 6.0 * i as f64 / 89.0).collect();
        let labels = xs
            .iter()
            .map(|&x| if x < -1.0 { 1 } else if x < 1.0 { 2 } else { 3 })
            .collect();
        OrdinalDataset::new(xs, 1, labels, 3).unwrap()
    }

    #[test]
    fn zero_epochs_rejected() {
        let data = separable_1d();
        let mut cfg = TrainConfig::new(LossSpec::plain(BaseLoss::Ce));
        cfg.epochs = 0;
        let model = cfg.init_model(1, 3).unwrap();
        assert!(matches!(train(model, &data, &cfg), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn separable_data_is_learned() {
        let data = separable_1d();
        let mut cfg = TrainConfig::new(LossSpec::plain(BaseLoss::Ce));
        cfg.learning_rate = 0.05;
        cfg.hidden_sizes = vec![4];
        cfg.activation = Activation::Linear;
        cfg.batch_size = 8;
        let model = cfg.init_model(1, 3).unwrap();
        let out = train(model, &data, &cfg).unwrap();
        let preds = out.model.predict_all(&data).unwrap();
        let mae: usize = preds.iter().zip(data.labels()).map(|(p, y)| p.abs_diff(*y)).sum();
        assert_eq!(mae, 0);
        assert!(out.rank_log.final_ordered);
        assert_eq!(out.loss_curve.len(), 300);
        assert_eq!(out.rank_log.total_updates, 300 * 12);
    }

    #[test]
    fn training_is_deterministic() {
        let data = separable_1d();
        let mut cfg = TrainConfig::new(LossSpec::plain(BaseLoss::Imc));
        cfg.epochs = 20;
        let a = train(cfg.init_model(1, 3).unwrap(), &data, &cfg).unwrap();
        let b = train(cfg.init_model(1, 3).unwrap(), &data, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.loss_curve, b.loss_curve);
        cfg.seed = 1;
        let c = train(cfg.init_model(1, 3).unwrap(), &data, &cfg).unwrap();
        assert_ne!(a.model, c.model);
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = TrainConfig::new(LossSpec::plain(BaseLoss::Ce));
        let mut m = cfg.init_model(3, 4).unwrap();
        m.thresholds_mut().as_mut_slice()[1] = 0.1 + 0.2;
        let back = OrdinalModel::from_checkpoint(&m.to_checkpoint()).unwrap();
        assert_eq!(back, m);
        assert!(OrdinalModel::from_checkpoint("ordinal v1\nK 3\nthresholds 1\n").is_err());
    }
}
