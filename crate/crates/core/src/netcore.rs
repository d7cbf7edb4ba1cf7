//! Dense feed-forward network with hand-written backpropagation and AdamW.
//!
//! Layer weights are row-major `(out_dim, in_dim)`. All arithmetic is `f64`.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::ConfigInvalid(format!("unknown activation '{other}'"))),
        }
    }

    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Linear => v,
        }
    }

    /// Derivative w.r.t. the pre-activation; ReLU uses 0 at the kink.
    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
            activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
}

/// Layer-by-layer activation trace from one forward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    shape: Vec<(usize, usize)>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.post.last().map(Vec::as_slice).unwrap_or(&self.input)
    }

    pub fn pre_activations(&self, layer: usize) -> &[f64] {
        &self.pre[layer]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub layers: Vec<LayerGrad>,
    /// Gradient of the loss w.r.t. the network output.
    pub d_output: Vec<f64>,
}

impl GradientBundle {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
            d_output: vec![0.0; net.output_dim()],
        }
    }

    pub fn reset(&mut self) {
        for l in &mut self.layers {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
        self.d_output.fill(0.0);
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|v| *v *= factor);
            l.bias.iter_mut().for_each(|v| *v *= factor);
        }
        self.d_output.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|&v| v == 0.0))
    }
}

impl DenseNet {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::ShapeMismatch("network needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::ShapeMismatch(format!(
                    "layer output {} does not feed layer input {}",
                    w[0].out_dim, w[1].in_dim
                )));
            }
        }
        for l in &layers {
            if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::ShapeMismatch(format!(
                    "layer {}x{} has {} weights and {} biases",
                    l.out_dim,
                    l.in_dim,
                    l.weights.len(),
                    l.bias.len()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Hidden layers use `hidden_activation`; the output layer is linear.
    pub fn with_seed(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        hidden_activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.contains(&0) {
            return Err(Error::ConfigInvalid("layer sizes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_dim;
        for &h in hidden {
            layers.push(DenseLayer::glorot(fan_in, h, hidden_activation, &mut rng));
            fan_in = h;
        }
        layers.push(DenseLayer::glorot(fan_in, output_dim, Activation::Linear, &mut rng));
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn shape(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.layers.iter().map(|l| (l.in_dim, l.out_dim))
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let mut cache = ForwardCache::default();
        self.forward_into(x, &mut cache)?;
        Ok((cache.output().to_vec(), cache))
    }

    /// Forward pass reusing the buffers in `cache`.
    pub fn forward_into(&self, x: &[f64], cache: &mut ForwardCache) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let n = self.layers.len();
        if cache.shape.len() != n || !cache.shape.iter().copied().eq(self.shape()) {
            cache.shape = self.shape().collect();
            cache.pre = self.layers.iter().map(|l| vec![0.0; l.out_dim]).collect();
            cache.post = cache.pre.clone();
        }
        cache.input.clear();
        cache.input.extend_from_slice(x);
        for (li, layer) in self.layers.iter().enumerate() {
            let (before, rest) = cache.post.split_at_mut(li);
            let input: &[f64] = if li == 0 { &cache.input } else { &before[li - 1] };
            let pre = &mut cache.pre[li];
            let post = &mut rest[0];
            for o in 0..layer.out_dim {
                let w = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                let z = layer.bias[o] + w.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                pre[o] = z;
                post[o] = layer.activation.apply(z);
            }
        }
        Ok(())
    }

    /// Scalar-output convenience; the caller guarantees `output_dim == 1`.
    pub fn score(&self, x: &[f64], cache: &mut ForwardCache) -> Result<f64> {
        self.forward_into(x, cache)?;
        Ok(cache.output()[0])
    }

    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<GradientBundle> {
        let mut grads = GradientBundle::zeros_like(self);
        let mut scratch = Vec::new();
        self.backward_accumulate(cache, upstream, &mut grads, &mut scratch)?;
        Ok(grads)
    }

    /// Adds this sample's gradients into `grads`.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        grads: &mut GradientBundle,
        scratch: &mut Vec<f64>,
    ) -> Result<()> {
        if !cache.shape.iter().copied().eq(self.shape()) || cache.input.len() != self.input_dim() {
            return Err(Error::CacheMismatch);
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::ShapeMismatch("gradient bundle does not match network".into()));
        }
        for (g, u) in grads.d_output.iter_mut().zip(upstream) {
            *g += u;
        }

        let mut delta: Vec<f64> = upstream.to_vec();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let pre = &cache.pre[li];
            for (d, &z) in delta.iter_mut().zip(pre) {
                *d *= layer.activation.derivative(z);
            }
            let input: &[f64] = if li == 0 { &cache.input } else { &cache.post[li - 1] };
            let g = &mut grads.layers[li];
            scratch.clear();
            scratch.resize(layer.in_dim, 0.0);
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = o * layer.in_dim..(o + 1) * layer.in_dim;
                for ((gw, &xi), (&w, s)) in g.weights[row.clone()]
                    .iter_mut()
                    .zip(input)
                    .zip(layer.weights[row].iter().zip(scratch.iter_mut()))
                {
                    *gw += d * xi;
                    *s += w * d;
                }
            }
            std::mem::swap(&mut delta, scratch);
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        writeln!(out, "densenet v1").unwrap();
        writeln!(out, "layers {}", self.layers.len()).unwrap();
        for l in &self.layers {
            writeln!(out, "layer {} {} {}", l.in_dim, l.out_dim, l.activation.name()).unwrap();
            writeln!(out, "w {}", join_floats(&l.weights)).unwrap();
            writeln!(out, "b {}", join_floats(&l.bias)).unwrap();
        }
        out
    }

    /// Parses a checkpoint from the front of `lines`, consuming only its lines.
    pub fn from_checkpoint_lines<'a, I>(lines: &mut I) -> Result<Self>
    where
        I: Iterator<Item = &'a str>,
    {
        let bad = |m: String| Error::ConfigInvalid(format!("checkpoint: {m}"));
        let mut next = |what: &str| lines.next().ok_or_else(|| bad(format!("missing {what}")));
        if next("header")?.trim() != "densenet v1" {
            return Err(bad("unsupported header".into()));
        }
        let count: usize = field(next("layer count")?, "layers")?
            .parse()
            .map_err(|e| bad(format!("layer count: {e}")))?;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let spec: Vec<&str> = field(next("layer")?, "layer")?.split_whitespace().collect();
            let [i, o, a] = spec.as_slice() else {
                return Err(bad("layer line needs 'in out activation'".into()));
            };
            let in_dim = i.parse().map_err(|e| bad(format!("in_dim: {e}")))?;
            let out_dim = o.parse().map_err(|e| bad(format!("out_dim: {e}")))?;
            let activation = Activation::parse(a)?;
            let weights = parse_floats(field(next("weights")?, "w")?)?;
            let bias = parse_floats(field(next("bias")?, "b")?)?;
            layers.push(DenseLayer {
                in_dim,
                out_dim,
                weights,
                bias,
                activation,
            });
        }
        Self::from_layers(layers)
    }
}

pub(crate) fn field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    let line = line.trim_end();
    match line.split_once(' ') {
        Some((k, rest)) if k == key => Ok(rest),
        None if line == key => Ok(""),
        _ => Err(Error::ConfigInvalid(format!(
            "checkpoint: expected '{key}' line, got '{line}'"
        ))),
    }
}

/// Shortest round-trip representation, so parsing restores identical bits.
pub(crate) fn join_floats(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

pub(crate) fn parse_floats(s: &str) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| Error::ConfigInvalid(format!("checkpoint: bad number '{t}': {e}")))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl AdamWConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }
}

/// AdamW moments for a list of parameter slots.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step_count: u64,
}

impl OptimizerState {
    pub fn new(config: AdamWConfig, slot_sizes: &[usize]) -> Self {
        Self {
            config,
            first_moment: slot_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: slot_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step_count: 0,
        }
    }

    /// Two slots per layer: weights then bias.
    pub fn net_slot_sizes(net: &DenseNet) -> Vec<usize> {
        net.layers
            .iter()
            .flat_map(|l| [l.weights.len(), l.bias.len()])
            .collect()
    }

    pub fn for_net(net: &DenseNet, config: AdamWConfig) -> Self {
        Self::new(config, &Self::net_slot_sizes(net))
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn slot_sizes(&self) -> Vec<usize> {
        self.first_moment.iter().map(Vec::len).collect()
    }

    /// Starts a new optimizer step; call once before updating the slots.
    pub fn begin_step(&mut self) {
        self.step_count += 1;
    }

    pub fn update_slot(&mut self, slot: usize, params: &mut [f64], grads: &[f64], decay: bool) -> Result<()> {
        let m = self
            .first_moment
            .get_mut(slot)
            .ok_or_else(|| Error::ShapeMismatch(format!("no optimizer slot {slot}")))?;
        if m.len() != params.len() || grads.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "slot {slot}: state {}, params {}, grads {}",
                m.len(),
                params.len(),
                grads.len()
            )));
        }
        let v = &mut self.second_moment[slot];
        let c = self.config;
        let t = self.step_count.max(1) as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let shrink = if decay {
            1.0 - c.learning_rate * c.weight_decay
        } else {
            1.0
        };
        for ((p, &g), (mi, vi)) in params.iter_mut().zip(grads).zip(m.iter_mut().zip(v.iter_mut())) {
            *p *= shrink;
            *mi = c.beta1 * *mi + (1.0 - c.beta1) * g;
            *vi = c.beta2 * *vi + (1.0 - c.beta2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *p -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
        }
        Ok(())
    }

    /// Updates the net's slots starting at `first_slot` (no `begin_step`).
    pub fn update_net(&mut self, net: &mut DenseNet, grads: &GradientBundle, first_slot: usize) -> Result<()> {
        if grads.layers.len() != net.layers.len() {
            return Err(Error::ShapeMismatch("gradient bundle does not match network".into()));
        }
        for (li, (layer, g)) in net.layers.iter_mut().zip(&grads.layers).enumerate() {
            self.update_slot(first_slot + 2 * li, &mut layer.weights, &g.weights, true)?;
            self.update_slot(first_slot + 2 * li + 1, &mut layer.bias, &g.bias, true)?;
        }
        Ok(())
    }
}

/// One AdamW step over every network parameter.
pub fn optimizer_step(net: &mut DenseNet, grads: &GradientBundle, state: &mut OptimizerState) -> Result<()> {
    if state.slot_sizes() != OptimizerState::net_slot_sizes(net) {
        return Err(Error::ShapeMismatch("optimizer state does not match network".into()));
    }
    state.begin_step();
    state.update_net(net, grads, 0)
}
