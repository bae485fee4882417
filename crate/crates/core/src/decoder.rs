//! Compact convolutional motor-imagery decoder.
//!
//! ```text
//! input  (C × T)
//!   ├─ temporal conv   F1 kernels of length k, valid padding    → F1 × C × (T−k+1)
//!   ├─ spatial conv    F2 kernels spanning F1 maps × C channels → F2 × (T−k+1)
//!   ├─ batch norm      per F2 feature
//!   ├─ SWISH           x · σ(x)
//!   ├─ average pool    length L, stride S                        → F2 × P
//!   ├─ dropout
//!   └─ affine          F2·P → n_classes logits
//! ```
//!
//! The two convolutions can be swapped (`ConvOrder::SpatialFirst`), in which
//! case the spatial stage maps C channels onto F1 virtual channels and the
//! temporal stage maps F1 maps onto F2 features.
//!
//! Everything runs in f64 with hand-written backpropagation. Parameters live
//! in one flat vector; [`DecoderModel::tensors`] gives the named layout.
//!
//! # Checkpoint format
//!
//! ```text
//! b"CHATBCI-CKPT\x01"                    13-byte magic
//! u64 LE                                 header length in bytes
//! header (UTF-8 JSON)                    {"config": DecoderConfig, "tensors": [{"name", "shape"}...]}
//! f32 LE values                          every tensor, in header order, row-major
//! ```
//!
//! Tensor order: trainable parameters in forward order, then the batch-norm
//! running statistics (`bn.running_mean`, `bn.running_var`).

use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
const CHECKPOINT_MAGIC: &[u8; 13] = b"CHATBCI-CKPT\x01";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvOrder {
    #[default]
    TemporalFirst,
    SpatialFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub n_channels: usize,
    pub n_samples: usize,
    pub n_classes: usize,
    pub temporal_filters: usize,
    pub temporal_kernel: usize,
    pub spatial_filters: usize,
    pub pool_length: usize,
    pub pool_stride: usize,
    pub dropout_p: f64,
    pub include_eog: bool,
    pub conv_order: ConvOrder,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            n_channels: 22,
            n_samples: 1000,
            n_classes: 4,
            temporal_filters: 8,
            temporal_kernel: 25,
            spatial_filters: 16,
            pool_length: 75,
            pool_stride: 15,
            dropout_p: 0.5,
            include_eog: false,
            conv_order: ConvOrder::TemporalFirst,
        }
    }
}

impl DecoderConfig {
    pub fn new(n_channels: usize, n_samples: usize) -> Self {
        Self { n_channels, n_samples, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_channels", self.n_channels),
            ("n_samples", self.n_samples),
            ("n_classes", self.n_classes),
            ("temporal_filters", self.temporal_filters),
            ("temporal_kernel", self.temporal_kernel),
            ("spatial_filters", self.spatial_filters),
            ("pool_length", self.pool_length),
            ("pool_stride", self.pool_stride),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.n_samples <= self.temporal_kernel + self.pool_length {
            return Err(Error::Config(format!(
                "n_samples {} must exceed temporal_kernel {} + pool_length {}",
                self.n_samples, self.temporal_kernel, self.pool_length
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p must be in [0, 1), got {}", self.dropout_p)));
        }
        Ok(())
    }

    pub fn conv_length(&self) -> usize {
        self.n_samples - self.temporal_kernel + 1
    }

    pub fn pooled_length(&self) -> usize {
        (self.conv_length() - self.pool_length) / self.pool_stride + 1
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> usize {
        let (c, k, f1, f2) = (self.n_channels, self.temporal_kernel, self.temporal_filters, self.spatial_filters);
        let convs = match self.conv_order {
            ConvOrder::TemporalFirst => (f1 * k + f1) + (f2 * f1 * c + f2),
            ConvOrder::SpatialFirst => (f1 * c + f1) + (f2 * f1 * k + f2),
        };
        convs + 2 * f2 + f2 * self.pooled_length() * self.n_classes + self.n_classes
    }
}

/// One convolution stage over activations shaped (maps, rows, time).
#[derive(Debug, Clone, Copy)]
enum Conv {
    /// Kernel over time, shared across rows.
    Temporal { in_maps: usize, out_maps: usize, kernel: usize },
    /// Kernel spanning every row; collapses rows to one.
    Spatial { in_maps: usize, out_maps: usize, rows: usize },
}

impl Conv {
    fn n_weights(&self) -> usize {
        match *self {
            Conv::Temporal { in_maps, out_maps, kernel } => out_maps * in_maps * kernel,
            Conv::Spatial { in_maps, out_maps, rows } => out_maps * in_maps * rows,
        }
    }

    fn out_maps(&self) -> usize {
        match *self {
            Conv::Temporal { out_maps, .. } | Conv::Spatial { out_maps, .. } => out_maps,
        }
    }

    fn weight_shape(&self) -> Vec<usize> {
        match *self {
            Conv::Temporal { in_maps, out_maps, kernel } => vec![out_maps, in_maps, kernel],
            Conv::Spatial { in_maps, out_maps, rows } => vec![out_maps, in_maps, rows],
        }
    }

    fn fan_in(&self) -> usize {
        self.n_weights() / self.out_maps()
    }

    /// Output (rows, time) for an input of (rows, time).
    fn out_dims(&self, rows: usize, time: usize) -> (usize, usize) {
        match *self {
            Conv::Temporal { kernel, .. } => (rows, time - kernel + 1),
            Conv::Spatial { .. } => (1, time),
        }
    }

    fn forward(&self, w: &[f64], b: &[f64], input: &[f64], rows: usize, time: usize, out: &mut [f64]) {
        let (out_rows, out_time) = self.out_dims(rows, time);
        match *self {
            Conv::Temporal { in_maps, out_maps, kernel } => {
                for o in 0..out_maps {
                    for h in 0..rows {
                        let dst = &mut out[(o * out_rows + h) * out_time..][..out_time];
                        dst.fill(b[o]);
                        for i in 0..in_maps {
                            let src = &input[(i * rows + h) * time..][..time];
                            for j in 0..kernel {
                                let wv = w[(o * in_maps + i) * kernel + j];
                                for (d, s) in dst.iter_mut().zip(&src[j..j + out_time]) {
                                    *d += wv * s;
                                }
                            }
                        }
                    }
                }
            }
            Conv::Spatial { in_maps, out_maps, rows: kh } => {
                debug_assert_eq!(kh, rows);
                for o in 0..out_maps {
                    let dst = &mut out[o * time..][..time];
                    dst.fill(b[o]);
                    for i in 0..in_maps {
                        for h in 0..rows {
                            let wv = w[(o * in_maps + i) * rows + h];
                            let src = &input[(i * rows + h) * time..][..time];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Accumulate weight/bias gradients; optionally accumulate into `din`.
    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        w: &[f64],
        input: &[f64],
        rows: usize,
        time: usize,
        dout: &[f64],
        dw: &mut [f64],
        db: &mut [f64],
        mut din: Option<&mut [f64]>,
    ) {
        let (out_rows, out_time) = self.out_dims(rows, time);
        match *self {
            Conv::Temporal { in_maps, out_maps, kernel } => {
                for o in 0..out_maps {
                    for h in 0..rows {
                        let g = &dout[(o * out_rows + h) * out_time..][..out_time];
                        db[o] += g.iter().sum::<f64>();
                        for i in 0..in_maps {
                            let src_off = (i * rows + h) * time;
                            for j in 0..kernel {
                                let widx = (o * in_maps + i) * kernel + j;
                                let src = &input[src_off + j..][..out_time];
                                dw[widx] += g.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                                if let Some(din) = din.as_deref_mut() {
                                    let wv = w[widx];
                                    for (d, gv) in din[src_off + j..][..out_time].iter_mut().zip(g) {
                                        *d += wv * gv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Conv::Spatial { in_maps, out_maps, .. } => {
                for o in 0..out_maps {
                    let g = &dout[o * time..][..time];
                    db[o] += g.iter().sum::<f64>();
                    for i in 0..in_maps {
                        for h in 0..rows {
                            let widx = (o * in_maps + i) * rows + h;
                            let off = (i * rows + h) * time;
                            dw[widx] += g.iter().zip(&input[off..off + time]).map(|(a, b)| a * b).sum::<f64>();
                            if let Some(din) = din.as_deref_mut() {
                                let wv = w[widx];
                                for (d, gv) in din[off..off + time].iter_mut().zip(g) {
                                    *d += wv * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Layout {
    first: Conv,
    second: Conv,
    first_names: (&'static str, &'static str),
    second_names: (&'static str, &'static str),
    first_w: Range<usize>,
    first_b: Range<usize>,
    second_w: Range<usize>,
    second_b: Range<usize>,
    bn_gamma: Range<usize>,
    bn_beta: Range<usize>,
    fc_w: Range<usize>,
    fc_b: Range<usize>,
    total: usize,
    features: usize,
    conv_len: usize,
    pooled: usize,
}

impl Layout {
    fn new(cfg: &DecoderConfig) -> Self {
        let (c, k, f1, f2) = (cfg.n_channels, cfg.temporal_kernel, cfg.temporal_filters, cfg.spatial_filters);
        let (first, second, first_names, second_names) = match cfg.conv_order {
            ConvOrder::TemporalFirst => (
                Conv::Temporal { in_maps: 1, out_maps: f1, kernel: k },
                Conv::Spatial { in_maps: f1, out_maps: f2, rows: c },
                ("temporal.weight", "temporal.bias"),
                ("spatial.weight", "spatial.bias"),
            ),
            ConvOrder::SpatialFirst => (
                Conv::Spatial { in_maps: 1, out_maps: f1, rows: c },
                Conv::Temporal { in_maps: f1, out_maps: f2, kernel: k },
                ("spatial.weight", "spatial.bias"),
                ("temporal.weight", "temporal.bias"),
            ),
        };
        let pooled = cfg.pooled_length();
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let first_w = take(first.n_weights());
        let first_b = take(first.out_maps());
        let second_w = take(second.n_weights());
        let second_b = take(second.out_maps());
        let bn_gamma = take(f2);
        let bn_beta = take(f2);
        let fc_w = take(cfg.n_classes * f2 * pooled);
        let fc_b = take(cfg.n_classes);
        Self {
            first,
            second,
            first_names,
            second_names,
            first_w,
            first_b,
            second_w,
            second_b,
            bn_gamma,
            bn_beta,
            fc_w,
            fc_b,
            total: at,
            features: f2,
            conv_len: cfg.conv_length(),
            pooled,
        }
    }

    fn first_out_len(&self, cfg: &DecoderConfig) -> usize {
        let (r, t) = self.first.out_dims(cfg.n_channels, cfg.n_samples);
        self.first.out_maps() * r * t
    }
}

/// Named tensor descriptor (checkpoint and introspection).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderModel {
    pub config: DecoderConfig,
    /// Trainable parameters, flat, in [`DecoderModel::tensors`] order.
    pub params: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    layout: Layout,
}

impl PartialEq for Layout {
    fn eq(&self, other: &Self) -> bool {
        self.total == other.total && self.first_w == other.first_w && self.fc_w == other.fc_w
    }
}

/// Intermediate values kept from a train-mode forward pass.
pub struct TrainCache {
    input: Array3<f64>,
    /// (N, F2, T') normalized pre-activation, x̂
    xhat: Vec<f64>,
    /// (N, F2, T') after scale/shift
    z: Vec<f64>,
    inv_std: Vec<f64>,
    /// (N, F2·P) dropout multiplier (0 or 1/(1−p))
    mask: Vec<f64>,
    /// (N, F2·P) classifier input
    features: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
    uses_batch_stats: bool,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn swish_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s + x * s * (1.0 - s)
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: ArrayView2<'_, f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let n = logits.nrows();
    let mut grad = Array2::zeros(logits.dim());
    let mut loss = 0.0;
    for (r, row) in logits.rows().into_iter().enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        loss += sum.ln() + max - row[labels[r]];
        for (k, e) in exps.iter().enumerate() {
            grad[[r, k]] = (e / sum - if k == labels[r] { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    (loss / n as f64, grad)
}

pub fn argmax_rows(logits: ArrayView2<'_, f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|r| r.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b }).0)
        .collect()
}

impl DecoderModel {
    /// Deterministic initialization: uniform ±1/√fan_in for conv and affine
    /// weights and biases, unit scale and zero shift for batch norm.
    pub fn build(config: &DecoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.total];
        let mut fill = |range: &Range<usize>, fan_in: usize, rng: &mut ChaCha8Rng| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[range.clone()] {
                *p = rng.random_range(-bound..bound);
            }
        };
        fill(&layout.first_w, layout.first.fan_in(), &mut rng);
        fill(&layout.first_b, layout.first.fan_in(), &mut rng);
        fill(&layout.second_w, layout.second.fan_in(), &mut rng);
        fill(&layout.second_b, layout.second.fan_in(), &mut rng);
        let fc_fan_in = layout.features * layout.pooled;
        fill(&layout.fc_w, fc_fan_in, &mut rng);
        fill(&layout.fc_b, fc_fan_in, &mut rng);
        params[layout.bn_gamma.clone()].fill(1.0);
        params[layout.bn_beta.clone()].fill(0.0);
        let f2 = layout.features;
        Ok(Self { config: config.clone(), params, running_mean: vec![0.0; f2], running_var: vec![1.0; f2], layout })
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Trainable tensors followed by the batch-norm running statistics.
    pub fn tensors(&self) -> Vec<TensorInfo> {
        let l = &self.layout;
        let f2 = l.features;
        let t = |name: &str, shape: Vec<usize>| TensorInfo { name: name.into(), shape };
        vec![
            t(l.first_names.0, l.first.weight_shape()),
            t(l.first_names.1, vec![l.first.out_maps()]),
            t(l.second_names.0, l.second.weight_shape()),
            t(l.second_names.1, vec![l.second.out_maps()]),
            t("bn.weight", vec![f2]),
            t("bn.bias", vec![f2]),
            t("classifier.weight", vec![self.config.n_classes, f2 * l.pooled]),
            t("classifier.bias", vec![self.config.n_classes]),
            t("bn.running_mean", vec![f2]),
            t("bn.running_var", vec![f2]),
        ]
    }

    pub fn trainable_tensors(&self) -> Vec<TensorInfo> {
        let mut t = self.tensors();
        t.truncate(8);
        t
    }

    pub fn param_slice(&self, name: &str) -> Option<&[f64]> {
        let l = &self.layout;
        let range = match name {
            n if n == l.first_names.0 => l.first_w.clone(),
            n if n == l.first_names.1 => l.first_b.clone(),
            n if n == l.second_names.0 => l.second_w.clone(),
            n if n == l.second_names.1 => l.second_b.clone(),
            "bn.weight" => l.bn_gamma.clone(),
            "bn.bias" => l.bn_beta.clone(),
            "classifier.weight" => l.fc_w.clone(),
            "classifier.bias" => l.fc_b.clone(),
            "bn.running_mean" => return Some(&self.running_mean),
            "bn.running_var" => return Some(&self.running_var),
            _ => return None,
        };
        Some(&self.params[range])
    }

    pub fn classifier_bias_range(&self) -> Range<usize> {
        self.layout.fc_b.clone()
    }

    fn check_batch(&self, batch: &ArrayView3<'_, f64>) -> Result<()> {
        let (_, c, t) = batch.dim();
        if c != self.config.n_channels || t != self.config.n_samples {
            return Err(Error::Shape {
                expected: vec![batch.dim().0, self.config.n_channels, self.config.n_samples],
                got: batch.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Both convolutions for one trial → (F2 × T') pre-normalization.
    fn conv_stages(&self, params: &[f64], trial: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        let l = &self.layout;
        let (c, t) = (self.config.n_channels, self.config.n_samples);
        l.first.forward(&params[l.first_w.clone()], &params[l.first_b.clone()], trial, c, t, scratch);
        let (r1, t1) = l.first.out_dims(c, t);
        l.second.forward(&params[l.second_w.clone()], &params[l.second_b.clone()], scratch, r1, t1, out);
    }

    /// Shared forward body. `bn_stats = None` uses batch statistics.
    fn forward_impl<R: Rng + ?Sized>(
        &self,
        params: &[f64],
        batch: ArrayView3<'_, f64>,
        use_batch_stats: bool,
        dropout: Option<&mut R>,
    ) -> (Array2<f64>, TrainCache) {
        let l = &self.layout;
        let n = batch.dim().0;
        let (f2, tc, pl) = (l.features, l.conv_len, l.pooled);
        let input = batch.as_standard_layout().into_owned();
        let trial_len = self.config.n_channels * self.config.n_samples;
        let flat = input.as_slice().expect("standard layout");

        let mut y = vec![0.0; n * f2 * tc];
        let mut scratch = vec![0.0; l.first_out_len(&self.config)];
        for i in 0..n {
            self.conv_stages(params, &flat[i * trial_len..][..trial_len], &mut scratch, &mut y[i * f2 * tc..][..f2 * tc]);
        }

        let (batch_mean, batch_var) = if use_batch_stats {
            let m = (n * tc) as f64;
            let mut mean = vec![0.0; f2];
            let mut var = vec![0.0; f2];
            for f in 0..f2 {
                let vals = || (0..n).flat_map(|i| y[(i * f2 + f) * tc..][..tc].iter());
                mean[f] = vals().sum::<f64>() / m;
                var[f] = vals().map(|v| (v - mean[f]).powi(2)).sum::<f64>() / m;
            }
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        let inv_std: Vec<f64> = batch_var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();

        let gamma = &params[l.bn_gamma.clone()];
        let beta = &params[l.bn_beta.clone()];
        let mut xhat = y;
        let mut z = vec![0.0; xhat.len()];
        for i in 0..n {
            for f in 0..f2 {
                let off = (i * f2 + f) * tc;
                for t in 0..tc {
                    let xh = (xhat[off + t] - batch_mean[f]) * inv_std[f];
                    xhat[off + t] = xh;
                    z[off + t] = gamma[f] * xh + beta[f];
                }
            }
        }

        let (len, stride) = (self.config.pool_length, self.config.pool_stride);
        let n_feat = f2 * pl;
        let mut features = vec![0.0; n * n_feat];
        for i in 0..n {
            for f in 0..f2 {
                let act = &z[(i * f2 + f) * tc..][..tc];
                for j in 0..pl {
                    let s: f64 = act[j * stride..j * stride + len].iter().map(|&v| swish(v)).sum();
                    features[i * n_feat + f * pl + j] = s / len as f64;
                }
            }
        }

        let mut mask = vec![1.0; features.len()];
        if let Some(rng) = dropout {
            let p = self.config.dropout_p;
            if p > 0.0 {
                let keep = 1.0 / (1.0 - p);
                for (m, v) in mask.iter_mut().zip(features.iter_mut()) {
                    *m = if rng.random::<f64>() < p { 0.0 } else { keep };
                    *v *= *m;
                }
            }
        }

        let k = self.config.n_classes;
        let w = &params[l.fc_w.clone()];
        let b = &params[l.fc_b.clone()];
        let mut logits = Array2::zeros((n, k));
        for i in 0..n {
            let x = &features[i * n_feat..][..n_feat];
            for c in 0..k {
                logits[[i, c]] = b[c] + w[c * n_feat..][..n_feat].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
        }

        let cache = TrainCache {
            input,
            xhat,
            z,
            inv_std,
            mask,
            features,
            batch_mean,
            batch_var,
            uses_batch_stats: use_batch_stats,
        };
        (logits, cache)
    }

    /// Deterministic inference with running batch-norm statistics.
    pub fn forward_eval(&self, batch: ArrayView3<'_, f64>) -> Result<Array2<f64>> {
        self.check_batch(&batch)?;
        Ok(self.forward_impl::<ChaCha8Rng>(&self.params, batch, false, None).0)
    }

    /// Train-mode forward: batch statistics, dropout, running-stat update.
    pub fn forward_train<R: Rng + ?Sized>(
        &mut self,
        batch: ArrayView3<'_, f64>,
        rng: &mut R,
    ) -> Result<(Array2<f64>, TrainCache)> {
        self.check_batch(&batch)?;
        let (logits, cache) = self.forward_impl(&self.params, batch, true, Some(rng));
        let m = (batch.dim().0 * self.layout.conv_len) as f64;
        let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
        for f in 0..self.layout.features {
            self.running_mean[f] = (1.0 - BN_MOMENTUM) * self.running_mean[f] + BN_MOMENTUM * cache.batch_mean[f];
            self.running_var[f] =
                (1.0 - BN_MOMENTUM) * self.running_var[f] + BN_MOMENTUM * cache.batch_var[f] * unbias;
        }
        Ok((logits, cache))
    }

    /// Spec-shaped entry point: `train_mode` selects batch statistics and dropout.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        batch: ArrayView3<'_, f64>,
        train_mode: bool,
        rng: &mut R,
    ) -> Result<Array2<f64>> {
        if train_mode {
            Ok(self.forward_train(batch, rng)?.0)
        } else {
            self.forward_eval(batch)
        }
    }

    pub fn predict(&self, batch: ArrayView3<'_, f64>) -> Result<Vec<usize>> {
        Ok(argmax_rows(self.forward_eval(batch)?.view()))
    }

    /// Gradient of the loss with respect to every trainable parameter, given
    /// the gradient at the logits.
    pub fn backward(&self, cache: &TrainCache, dlogits: ArrayView2<'_, f64>) -> Vec<f64> {
        self.backward_with(&self.params, cache, dlogits)
    }

    fn backward_with(&self, params: &[f64], cache: &TrainCache, dlogits: ArrayView2<'_, f64>) -> Vec<f64> {
        let l = &self.layout;
        let n = dlogits.nrows();
        let (f2, tc, pl) = (l.features, l.conv_len, l.pooled);
        let n_feat = f2 * pl;
        let k = self.config.n_classes;
        let mut grad = vec![0.0; l.total];

        // affine
        let w = &params[l.fc_w.clone()];
        let mut dfeat = vec![0.0; n * n_feat];
        for i in 0..n {
            let x = &cache.features[i * n_feat..][..n_feat];
            for c in 0..k {
                let g = dlogits[[i, c]];
                grad[l.fc_b.start + c] += g;
                let gw = &mut grad[l.fc_w.start + c * n_feat..][..n_feat];
                for (d, xv) in gw.iter_mut().zip(x) {
                    *d += g * xv;
                }
                for (d, wv) in dfeat[i * n_feat..][..n_feat].iter_mut().zip(&w[c * n_feat..][..n_feat]) {
                    *d += g * wv;
                }
            }
        }

        // dropout, pool, swish
        let (len, stride) = (self.config.pool_length, self.config.pool_stride);
        let mut dz = vec![0.0; n * f2 * tc];
        for i in 0..n {
            for f in 0..f2 {
                let off = (i * f2 + f) * tc;
                for j in 0..pl {
                    let fi = i * n_feat + f * pl + j;
                    let g = dfeat[fi] * cache.mask[fi] / len as f64;
                    for t in j * stride..j * stride + len {
                        dz[off + t] += g;
                    }
                }
                for t in 0..tc {
                    dz[off + t] *= swish_grad(cache.z[off + t]);
                }
            }
        }

        // batch norm
        let gamma = &params[l.bn_gamma.clone()];
        let mut dy = vec![0.0; n * f2 * tc];
        let m = (n * tc) as f64;
        for f in 0..f2 {
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            for i in 0..n {
                let off = (i * f2 + f) * tc;
                for t in 0..tc {
                    let d = dz[off + t];
                    grad[l.bn_gamma.start + f] += d * cache.xhat[off + t];
                    grad[l.bn_beta.start + f] += d;
                    let dxh = d * gamma[f];
                    sum_dxhat += dxh;
                    sum_dxhat_xhat += dxh * cache.xhat[off + t];
                }
            }
            for i in 0..n {
                let off = (i * f2 + f) * tc;
                for t in 0..tc {
                    let dxh = dz[off + t] * gamma[f];
                    dy[off + t] = if cache.uses_batch_stats {
                        cache.inv_std[f] / m * (m * dxh - sum_dxhat - cache.xhat[off + t] * sum_dxhat_xhat)
                    } else {
                        dxh * cache.inv_std[f]
                    };
                }
            }
        }

        // convolutions, recomputing the first stage per trial
        let (c, t) = (self.config.n_channels, self.config.n_samples);
        let (r1, t1) = l.first.out_dims(c, t);
        let flat = cache.input.as_slice().expect("standard layout");
        let trial_len = c * t;
        let mut scratch = vec![0.0; l.first_out_len(&self.config)];
        let mut dscratch = vec![0.0; scratch.len()];
        let (head, tail) = grad.split_at_mut(l.second_w.start);
        let (dsecond_w, rest) = tail.split_at_mut(l.second_w.len());
        let dsecond_b = &mut rest[..l.second_b.len()];
        let (dfirst_w, rest) = head[l.first_w.start..].split_at_mut(l.first_w.len());
        let dfirst_b = &mut rest[..l.first_b.len()];
        for i in 0..n {
            let trial = &flat[i * trial_len..][..trial_len];
            l.first.forward(&params[l.first_w.clone()], &params[l.first_b.clone()], trial, c, t, &mut scratch);
            dscratch.fill(0.0);
            l.second.backward(
                &params[l.second_w.clone()],
                &scratch,
                r1,
                t1,
                &dy[i * f2 * tc..][..f2 * tc],
                dsecond_w,
                dsecond_b,
                Some(&mut dscratch),
            );
            l.first.backward(&params[l.first_w.clone()], trial, c, t, &dscratch, dfirst_w, dfirst_b, None);
        }
        grad
    }

    /// Pure loss evaluation at arbitrary parameters (finite differences).
    fn loss_at(&self, params: &[f64], batch: ArrayView3<'_, f64>, labels: &[usize], train_mode: bool) -> f64 {
        let (logits, _) = self.forward_impl::<ChaCha8Rng>(params, batch, train_mode, None);
        cross_entropy(logits.view(), labels).0
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let tensors = self.tensors();
        let header = serde_json::to_vec(&serde_json::json!({ "config": self.config, "tensors": tensors }))?;
        let mut out = Vec::with_capacity(header.len() + 21 + 4 * (self.params.len() + 2 * self.running_mean.len()));
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.params.iter().chain(&self.running_mean).chain(&self.running_var) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&out)?;
        Ok(())
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        let bad = |m: &str| Error::Format(format!("checkpoint: {m}"));
        if bytes.len() < 21 || &bytes[..13] != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let hlen = u64::from_le_bytes(bytes[13..21].try_into().unwrap()) as usize;
        let header: serde_json::Value =
            serde_json::from_slice(bytes.get(21..21 + hlen).ok_or_else(|| bad("truncated header"))?)?;
        let config: DecoderConfig = serde_json::from_value(header["config"].clone())?;
        let tensors: Vec<TensorInfo> = serde_json::from_value(header["tensors"].clone())?;
        let mut model = Self::build(&config, 0)?;
        if tensors != model.tensors() {
            return Err(bad("tensor table does not match config"));
        }
        let values: Vec<f64> = bytes[21 + hlen..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        let f2 = model.running_mean.len();
        if values.len() != model.params.len() + 2 * f2 {
            return Err(bad("value count does not match tensor table"));
        }
        let np = model.params.len();
        model.params.copy_from_slice(&values[..np]);
        model.running_mean.copy_from_slice(&values[np..np + f2]);
        model.running_var.copy_from_slice(&values[np + f2..]);
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    pub worst_param: usize,
    pub n_params: usize,
    pub all_finite: bool,
}

/// Gradients below this magnitude are compared absolutely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compare analytic gradients of the train-mode cross-entropy (dropout
/// disabled) with central finite differences (h = 1e-5) on every parameter.
pub fn gradient_check_on(model: &DecoderModel, batch: ArrayView3<'_, f64>, labels: &[usize]) -> Result<GradientCheck> {
    model.check_batch(&batch)?;
    let (logits, cache) = model.forward_impl::<ChaCha8Rng>(&model.params, batch.view(), true, None);
    let (_, dlogits) = cross_entropy(logits.view(), labels);
    let analytic = model.backward_with(&model.params, &cache, dlogits.view());

    let h = 1e-5;
    let mut params = model.params.clone();
    let mut worst = (0.0f64, 0usize);
    let mut all_finite = true;
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + h;
        let up = model.loss_at(&params, batch.view(), labels, true);
        params[i] = orig - h;
        let down = model.loss_at(&params, batch.view(), labels, true);
        params[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        all_finite &= numeric.is_finite() && analytic[i].is_finite();
        let denom = analytic[i].abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > worst.0 || rel.is_nan() {
            worst = (rel, i);
        }
    }
    Ok(GradientCheck { max_rel_error: worst.0, worst_param: worst.1, n_params: params.len(), all_finite })
}

/// Build a model from `config` (dropout forced off) with `seed`, draw a
/// random batch and labels from the same seed, and run [`gradient_check_on`].
pub fn gradient_check(config: &DecoderConfig, seed: u64) -> Result<GradientCheck> {
    let cfg = DecoderConfig { dropout_p: 0.0, ..config.clone() };
    let model = DecoderModel::build(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let n = 3;
    let batch = Array3::from_shape_fn((n, cfg.n_channels, cfg.n_samples), |_| rng.random_range(-1.0..1.0));
    let labels: Vec<usize> = (0..n).map(|i| i % cfg.n_classes).collect();
    gradient_check_on(&model, batch.view(), &labels)
}

/// Small configuration suited to finite-difference checks.
pub fn tiny_config(n_channels: usize, n_samples: usize) -> DecoderConfig {
    DecoderConfig {
        n_channels,
        n_samples,
        n_classes: 4,
        temporal_filters: 2,
        temporal_kernel: 5,
        spatial_filters: 3,
        pool_length: 8,
        pool_stride: 4,
        dropout_p: 0.0,
        include_eog: false,
        conv_order: ConvOrder::TemporalFirst,
    }
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    predicted.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

pub fn batch_of(data: &Array3<f64>, indices: &[usize]) -> Array3<f64> {
    data.select(Axis(0), indices)
}
