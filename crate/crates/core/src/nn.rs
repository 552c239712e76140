//! Feed-forward binary classifier.
//!
//! Each hidden layer runs `linear -> activation -> dropout -> batch norm`;
//! the head is a single logistic unit. Weights are stored `(fan_in, fan_out)`
//! so a batch `X` of shape `(rows, fan_in)` maps to `X.dot(W) + b`.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BATCH_NORM_EPS: f64 = 1e-5;
/// Fraction of the old running statistic kept on each update.
pub const BATCH_NORM_MOMENTUM: f64 = 0.9;
pub const LEAKY_RELU_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_RELU_SLOPE * z
                }
            }
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match (self, z > 0.0) {
            (_, true) => 1.0,
            (Activation::Relu, false) => 0.0,
            (Activation::LeakyRelu, false) => LEAKY_RELU_SLOPE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HiddenSpec {
    pub width: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden: Vec<HiddenSpec>,
    pub dropout_rate: f64,
    pub use_batch_norm: bool,
    pub seed: u64,
}

impl NetworkConfig {
    /// Two hidden layers of the same width and activation, 10% dropout,
    /// batch norm on.
    pub fn two_layer(input_dim: usize, widths: [usize; 2], activation: Activation, seed: u64) -> Self {
        NetworkConfig {
            input_dim,
            hidden: widths.iter().map(|&width| HiddenSpec { width, activation }).collect(),
            dropout_rate: 0.1,
            use_batch_norm: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("network input dimension is zero".into()));
        }
        if self.hidden.is_empty() {
            return Err(Error::Config("network needs at least one hidden layer".into()));
        }
        if let Some(i) = self.hidden.iter().position(|h| h.width == 0) {
            return Err(Error::Config(format!("hidden layer {i} has zero width")));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} not in [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    pub fn widths(&self) -> Vec<usize> {
        self.hidden.iter().map(|h| h.width).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense { weight: Array2::zeros((fan_in, fan_out)), bias: Array1::zeros(fan_out) }
    }
}

/// Trainable parameters of one hidden layer. `gamma`/`beta` are empty when
/// batch norm is off.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub dense: Dense,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

/// All trainable parameters. The same shape doubles as a gradient set and
/// as Adam's moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub hidden: Vec<LayerParams>,
    pub output: Dense,
}

impl Params {
    pub fn zeros(config: &NetworkConfig) -> Self {
        let mut fan_in = config.input_dim;
        let hidden = config
            .hidden
            .iter()
            .map(|h| {
                let bn = if config.use_batch_norm { h.width } else { 0 };
                let layer = LayerParams {
                    dense: Dense::zeros(fan_in, h.width),
                    gamma: Array1::zeros(bn),
                    beta: Array1::zeros(bn),
                };
                fan_in = h.width;
                layer
            })
            .collect();
        Params { hidden, output: Dense::zeros(fan_in, 1) }
    }

    pub fn zeros_like(&self) -> Self {
        Params {
            hidden: self
                .hidden
                .iter()
                .map(|l| LayerParams {
                    dense: Dense::zeros(l.dense.weight.nrows(), l.dense.weight.ncols()),
                    gamma: Array1::zeros(l.gamma.len()),
                    beta: Array1::zeros(l.beta.len()),
                })
                .collect(),
            output: Dense::zeros(self.output.weight.nrows(), 1),
        }
    }

    /// Flat views of every parameter tensor in a fixed order.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.hidden.len() * 4 + 2);
        for l in &self.hidden {
            out.push(l.dense.weight.as_slice().expect("standard layout"));
            out.push(l.dense.bias.as_slice().expect("standard layout"));
            out.push(l.gamma.as_slice().expect("standard layout"));
            out.push(l.beta.as_slice().expect("standard layout"));
        }
        out.push(self.output.weight.as_slice().expect("standard layout"));
        out.push(self.output.bias.as_slice().expect("standard layout"));
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.hidden.len() * 4 + 2);
        for l in &mut self.hidden {
            out.push(l.dense.weight.as_slice_mut().expect("standard layout"));
            out.push(l.dense.bias.as_slice_mut().expect("standard layout"));
            out.push(l.gamma.as_slice_mut().expect("standard layout"));
            out.push(l.beta.as_slice_mut().expect("standard layout"));
        }
        out.push(self.output.weight.as_slice_mut().expect("standard layout"));
        out.push(self.output.bias.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn len(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn same_shape(&self, other: &Params) -> bool {
        let a = self.slices();
        let b = other.slices();
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.len() == y.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub config: NetworkConfig,
    pub params: Params,
    /// Batch-norm running statistics, one per hidden layer (empty when
    /// batch norm is off).
    pub running: Vec<RunningStats>,
}

/// Intermediate values of one hidden layer for a train-mode pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    input: Array2<f64>,
    pre_activation: Array2<f64>,
    mask: Option<Array2<f64>>,
    normalized: Option<Array2<f64>>,
    inv_std: Array1<f64>,
    batch_mean: Array1<f64>,
    batch_var: Array1<f64>,
}

impl LayerCache {
    pub fn dropout_mask(&self) -> Option<&Array2<f64>> {
        self.mask.as_ref()
    }
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub layers: Vec<LayerCache>,
    last_hidden: Array2<f64>,
    pub probs: Array1<f64>,
}

impl ForwardCache {
    pub fn batch_len(&self) -> usize {
        self.probs.len()
    }
}

impl NetworkState {
    /// He-normal weights (`std = sqrt(2 / fan_in)`), zero biases, `gamma = 1`,
    /// `beta = 0`, running statistics `(0, 1)`.
    pub fn init(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Params::zeros(config);
        let he = |w: &mut Array2<f64>, rng: &mut ChaCha8Rng| {
            let std = (2.0 / w.nrows() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            w.iter_mut().for_each(|x| *x = normal.sample(rng));
        };
        for layer in &mut params.hidden {
            he(&mut layer.dense.weight, &mut rng);
            layer.gamma.fill(1.0);
        }
        he(&mut params.output.weight, &mut rng);
        let running = if config.use_batch_norm {
            config
                .hidden
                .iter()
                .map(|h| RunningStats { mean: Array1::zeros(h.width), var: Array1::ones(h.width) })
                .collect()
        } else {
            Vec::new()
        };
        Ok(NetworkState { config: config.clone(), params, running })
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.config.input_dim {
            return Err(Error::InputShape(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.config.input_dim
            )));
        }
        Ok(())
    }

    /// Eval-mode forward: no dropout, batch norm uses running statistics.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_input(&x)?;
        let mut h = x.to_owned();
        for (i, (spec, layer)) in self.config.hidden.iter().zip(&self.params.hidden).enumerate() {
            let mut z = h.dot(&layer.dense.weight) + &layer.dense.bias;
            z.mapv_inplace(|v| spec.activation.apply(v));
            if self.config.use_batch_norm {
                let stats = &self.running[i];
                let scale: Array1<f64> = Zip::from(&layer.gamma)
                    .and(&stats.var)
                    .map_collect(|&g, &v| g / (v + BATCH_NORM_EPS).sqrt());
                let shift: Array1<f64> = Zip::from(&layer.beta)
                    .and(&stats.mean)
                    .and(&scale)
                    .map_collect(|&b, &m, &s| b - m * s);
                z = z * &scale + &shift;
            }
            h = z;
        }
        Ok(self.head(&h))
    }

    fn head(&self, h: &Array2<f64>) -> Array1<f64> {
        let logits = h.dot(&self.params.output.weight).column(0).to_owned() + self.params.output.bias[0];
        logits.mapv(crate::losses::sigmoid)
    }

    /// Draws inverted-dropout masks (`0` or `1 / (1 - rate)`) for a batch.
    pub fn sample_masks(&self, rows: usize, rng: &mut dyn RngCore) -> Vec<Option<Array2<f64>>> {
        let rate = self.config.dropout_rate;
        self.config
            .hidden
            .iter()
            .map(|h| {
                (rate > 0.0).then(|| {
                    let keep = 1.0 / (1.0 - rate);
                    Array2::from_shape_simple_fn((rows, h.width), || if rng.random::<f64>() < rate { 0.0 } else { keep })
                })
            })
            .collect()
    }

    /// Train-mode forward with freshly drawn dropout masks.
    pub fn forward_train(&self, x: ArrayView2<f64>, rng: &mut dyn RngCore) -> Result<ForwardCache> {
        let masks = self.sample_masks(x.nrows(), rng);
        self.forward_train_with_masks(x, masks)
    }

    /// Train-mode forward with caller-supplied dropout masks. Batch norm
    /// normalizes with the batch's own statistics; running statistics are
    /// not touched (see [`NetworkState::absorb_batch_stats`]).
    pub fn forward_train_with_masks(
        &self,
        x: ArrayView2<f64>,
        masks: Vec<Option<Array2<f64>>>,
    ) -> Result<ForwardCache> {
        self.check_input(&x)?;
        if masks.len() != self.config.hidden.len() {
            return Err(Error::State("one dropout mask slot per hidden layer expected".into()));
        }
        let rows = x.nrows();
        let mut h = x.to_owned();
        let mut layers = Vec::with_capacity(masks.len());
        for ((spec, layer), mask) in self.config.hidden.iter().zip(&self.params.hidden).zip(masks) {
            let pre = h.dot(&layer.dense.weight) + &layer.dense.bias;
            let mut a = pre.mapv(|v| spec.activation.apply(v));
            if let Some(m) = &mask {
                if m.dim() != a.dim() {
                    return Err(Error::State("dropout mask shape mismatch".into()));
                }
                a *= m;
            }
            let input = std::mem::replace(&mut h, Array2::zeros((0, 0)));
            if self.config.use_batch_norm {
                let mean = a.mean_axis(Axis(0)).expect("non-empty batch");
                let centered = &a - &mean;
                let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / rows as f64;
                let inv_std = var.mapv(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt());
                let normalized = centered * &inv_std;
                h = &normalized * &layer.gamma + &layer.beta;
                layers.push(LayerCache {
                    input,
                    pre_activation: pre,
                    mask,
                    normalized: Some(normalized),
                    inv_std,
                    batch_mean: mean,
                    batch_var: var,
                });
            } else {
                h = a;
                layers.push(LayerCache {
                    input,
                    pre_activation: pre,
                    mask,
                    normalized: None,
                    inv_std: Array1::zeros(0),
                    batch_mean: Array1::zeros(0),
                    batch_var: Array1::zeros(0),
                });
            }
        }
        let probs = self.head(&h);
        Ok(ForwardCache { layers, last_hidden: h, probs })
    }

    /// Folds a train-mode batch's statistics into the running estimates.
    pub fn absorb_batch_stats(&mut self, cache: &ForwardCache) {
        if !self.config.use_batch_norm {
            return;
        }
        let n = cache.batch_len() as f64;
        let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        for (stats, layer) in self.running.iter_mut().zip(&cache.layers) {
            Zip::from(&mut stats.mean)
                .and(&layer.batch_mean)
                .for_each(|r, &b| *r = BATCH_NORM_MOMENTUM * *r + (1.0 - BATCH_NORM_MOMENTUM) * b);
            Zip::from(&mut stats.var)
                .and(&layer.batch_var)
                .for_each(|r, &b| *r = BATCH_NORM_MOMENTUM * *r + (1.0 - BATCH_NORM_MOMENTUM) * b * unbias);
        }
    }

    /// Gradients of a scalar loss given `d loss / d prob` for every row of
    /// the cached batch.
    pub fn backward(&self, cache: &ForwardCache, d_probs: &[f64]) -> Result<Params> {
        if d_probs.len() != cache.batch_len() {
            return Err(Error::State(format!(
                "loss gradient has {} entries, cached batch has {}",
                d_probs.len(),
                cache.batch_len()
            )));
        }
        if cache.layers.len() != self.params.hidden.len()
            || cache.last_hidden.ncols() != self.params.output.weight.nrows()
        {
            return Err(Error::State("forward cache does not match this network".into()));
        }
        let rows = cache.batch_len() as f64;
        let mut grads = self.params.zeros_like();

        let d_logit: Array1<f64> = Zip::from(d_probs)
            .and(&cache.probs)
            .map_collect(|&g, &p| g * p * (1.0 - p));
        let d_logit_col = d_logit.view().insert_axis(Axis(1));
        grads.output.weight = standard(cache.last_hidden.t().dot(&d_logit_col));
        grads.output.bias[0] = d_logit.sum();
        let mut d_h = d_logit_col.dot(&self.params.output.weight.t());

        for (i, (spec, layer)) in self.config.hidden.iter().zip(&self.params.hidden).enumerate().rev() {
            let lc = &cache.layers[i];
            let g = &mut grads.hidden[i];
            let mut d_a = if let Some(xhat) = &lc.normalized {
                g.gamma = (&d_h * xhat).sum_axis(Axis(0));
                g.beta = d_h.sum_axis(Axis(0));
                let d_xhat = d_h * &layer.gamma;
                let sum_d = d_xhat.sum_axis(Axis(0));
                let sum_dx = (&d_xhat * xhat).sum_axis(Axis(0));
                let mut d = d_xhat * rows - &sum_d - &(xhat * &sum_dx);
                d *= &(&lc.inv_std / rows);
                d
            } else {
                d_h
            };
            if let Some(m) = &lc.mask {
                d_a *= m;
            }
            Zip::from(&mut d_a)
                .and(&lc.pre_activation)
                .for_each(|d, &z| *d *= spec.activation.derivative(z));
            g.dense.weight = standard(lc.input.t().dot(&d_a));
            g.dense.bias = d_a.sum_axis(Axis(0));
            d_h = if i > 0 { d_a.dot(&layer.dense.weight.t()) } else { Array2::zeros((0, 0)) };
        }
        Ok(grads)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }
}

/// Parameter and gradient tensors share row-major layout so their flat
/// slices line up element for element.
fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.001, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first: Params,
    pub second: Params,
    pub t: u64,
}

impl AdamState {
    pub fn new(state: &NetworkState, config: AdamConfig) -> Self {
        AdamState {
            config,
            first: state.params.zeros_like(),
            second: state.params.zeros_like(),
            t: 0,
        }
    }

    /// One bias-corrected Adam update of `state` along `grads`.
    pub fn step(&mut self, state: &mut NetworkState, grads: &Params) -> Result<()> {
        if !state.params.same_shape(grads) || !state.params.same_shape(&self.first) {
            return Err(Error::State("gradient/optimizer shapes do not match the network".into()));
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let params = state.params.slices_mut();
        let grads = grads.slices();
        let firsts = self.first.slices_mut();
        let seconds = self.second.slices_mut();
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(firsts).zip(seconds) {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
