//! Temporal CNN classifier: three convolution blocks, a hidden dense layer
//! and a softmax output.
//!
//! ```text
//! 3 × (conv1d → batchnorm → relu → maxpool) → flatten → dense → relu → dense → softmax
//! ```

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::activation::softmax_backward;
use crate::nn::loss::{consistency_grad, consistency_loss, cross_entropy_logit_grad, cross_entropy_soft};
use crate::nn::{BatchNorm1d, Conv1d, Dense, Layer, MaxPool1d, Network, OptimizerConfig, OptimizerState};
use crate::tensor::{ProbMatrix, Tensor};

/// Rows per inference chunk when predicting in parallel.
const PREDICT_CHUNK: usize = 128;

/// Scale applied to the output layer's initial weights so an untrained
/// network starts close to the uniform distribution.
const OUTPUT_INIT_GAIN: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TempCnnConfig {
    /// Input channel count `k`. Zero means "take it from the data".
    pub input_channels: usize,
    /// Input window length `N`. Zero means "take it from the data".
    pub input_length: usize,
    /// Class count `C`. Zero means "take it from the data".
    pub classes: usize,
    pub filters: [usize; 3],
    pub kernel_sizes: [usize; 3],
    pub pool_width: usize,
    pub pool_stride: usize,
    pub dense_width: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Early-stopping patience on validation loss; `0` disables early stopping.
    pub patience: usize,
    pub optimizer: OptimizerConfig,
    /// Set from the run seed, not from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TempCnnConfig {
    fn default() -> Self {
        Self {
            input_channels: 0,
            input_length: 0,
            classes: 0,
            filters: [32, 32, 32],
            kernel_sizes: [3, 3, 3],
            pool_width: 2,
            pool_stride: 2,
            dense_width: 64,
            batch_size: 16,
            epochs: 100,
            patience: 10,
            optimizer: OptimizerConfig::default(),
            seed: 0,
        }
    }
}

impl TempCnnConfig {
    pub fn with_input(mut self, channels: usize, length: usize, classes: usize) -> Result<Self> {
        for (name, set, actual) in [
            ("input_channels", self.input_channels, channels),
            ("input_length", self.input_length, length),
            ("classes", self.classes, classes),
        ] {
            if set != 0 && set != actual {
                return Err(Error::Config(format!("model.{name} = {set} but the data has {actual}")));
            }
        }
        self.input_channels = channels;
        self.input_length = length;
        self.classes = classes;
        Ok(self)
    }

    /// Shortest input window the three conv/pool blocks accept.
    pub fn min_input_length(&self) -> usize {
        let mut t = 1;
        for &k in self.kernel_sizes.iter().rev() {
            t = (t - 1) * self.pool_stride + self.pool_width;
            t = t - 1 + k;
        }
        t
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 {
            return Err(Error::Config("model.input_channels must be positive".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!("model.classes must be at least 2, got {}", self.classes)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "model.batch_size must be at least 2 for batch normalization, got {}",
                self.batch_size
            )));
        }
        if self.filters.contains(&0) || self.kernel_sizes.contains(&0) || self.dense_width == 0 {
            return Err(Error::Config("model filter counts, kernel sizes and dense_width must be positive".into()));
        }
        if self.pool_width == 0 || self.pool_stride == 0 {
            return Err(Error::Config("model.pool_width and model.pool_stride must be positive".into()));
        }
        let min = self.min_input_length();
        if self.input_length < min {
            return Err(Error::Config(format!(
                "input length {} is too short for three conv/pool blocks; minimum N is {min}",
                self.input_length
            )));
        }
        self.optimizer.validate()
    }

    /// Time length after each block.
    fn block_lengths(&self) -> [usize; 3] {
        let mut t = self.input_length;
        let mut out = [0; 3];
        for (i, &k) in self.kernel_sizes.iter().enumerate() {
            t = t + 1 - k;
            t = (t - self.pool_width) / self.pool_stride + 1;
            out[i] = t;
        }
        out
    }

    /// Closed-form parameter count of [`build_tempcnn`]'s network.
    pub fn param_count(&self) -> usize {
        let mut total = 0;
        let mut cin = self.input_channels;
        for (&f, &k) in self.filters.iter().zip(&self.kernel_sizes) {
            total += cin * f * k + f + 2 * f;
            cin = f;
        }
        let flat = self.filters[2] * self.block_lengths()[2];
        total + flat * self.dense_width + self.dense_width + self.dense_width * self.classes + self.classes
    }
}

pub fn build_tempcnn(cfg: &TempCnnConfig) -> Result<Network<f32>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut layers = Vec::with_capacity(16);
    let mut cin = cfg.input_channels;
    for (&f, &k) in cfg.filters.iter().zip(&cfg.kernel_sizes) {
        let mut conv = Conv1d::new(cin, f, k, 1)?;
        conv.init(&mut rng);
        layers.push(Layer::Conv1d(conv));
        layers.push(Layer::BatchNorm(BatchNorm1d::new(f)));
        layers.push(Layer::Relu);
        layers.push(Layer::MaxPool(MaxPool1d::new(cfg.pool_width, cfg.pool_stride)?));
        cin = f;
    }
    let flat = cfg.filters[2] * cfg.block_lengths()[2];
    let mut hidden = Dense::new(flat, cfg.dense_width)?;
    hidden.init(&mut rng);
    let mut output = Dense::new(cfg.dense_width, cfg.classes)?;
    output.init(&mut rng);
    output.weight.iter_mut().for_each(|w| *w *= OUTPUT_INIT_GAIN as f32);
    layers.extend([
        Layer::Flatten,
        Layer::Dense(hidden),
        Layer::Relu,
        Layer::Dense(output),
        Layer::Softmax,
    ]);
    Network::new(layers, vec![cfg.input_channels, cfg.input_length])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub supervised_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consistency_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_accuracy: Option<f64>,
    /// Consistency loss of the monitored probe pair, in inference mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_consistency: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
    /// Epoch whose parameters were kept when early stopping was active.
    pub best_epoch: Option<usize>,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.supervised_loss)
    }
}

/// Training inputs. `augmented` rows pair one-to-one with `x` and share its
/// targets; when present the consistency term is weighted by
/// `consistency_weight`.
#[derive(Clone, Copy, Debug)]
pub struct TrainSet<'a> {
    pub x: &'a Tensor,
    pub y: &'a ProbMatrix,
    pub augmented: Option<&'a Tensor>,
    pub consistency_weight: f64,
}

impl<'a> TrainSet<'a> {
    pub fn supervised(x: &'a Tensor, y: &'a ProbMatrix) -> Self {
        Self {
            x,
            y,
            augmented: None,
            consistency_weight: 0.0,
        }
    }
}

/// Optional per-epoch measurements. Validation loss drives early stopping.
#[derive(Clone, Copy, Debug, Default)]
pub struct Monitor<'a> {
    pub validation: Option<(&'a Tensor, &'a ProbMatrix)>,
    pub consistency_probe: Option<(&'a Tensor, &'a Tensor)>,
    /// Label for divergence errors.
    pub phase: &'a str,
}

/// Minibatch training on `cross_entropy_soft` with no monitoring.
pub fn fit(network: &mut Network<f32>, x: &Tensor, y: &ProbMatrix, cfg: &TempCnnConfig) -> Result<TrainReport> {
    fit_with(network, TrainSet::supervised(x, y), cfg, &Monitor::default())
}

fn batches(n: usize, batch_size: usize, order: &[usize]) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = (start + batch_size).min(n);
        // a trailing single sample joins the previous batch
        if n - end == 1 {
            end = n;
        }
        out.push(&order[start..end]);
        start = end;
    }
    out
}

pub fn fit_with(network: &mut Network<f32>, data: TrainSet<'_>, cfg: &TempCnnConfig, monitor: &Monitor<'_>) -> Result<TrainReport> {
    let started = Instant::now();
    let n = data.x.batch();
    if data.y.batch() != n || data.y.shape().get(1) != Some(&network.classes()) {
        return Err(Error::dim(format!(
            "targets {:?} do not match {} samples x {} classes",
            data.y.shape(),
            n,
            network.classes()
        )));
    }
    if let Some(aug) = data.augmented {
        if aug.shape() != data.x.shape() {
            return Err(Error::dim(format!(
                "augmented inputs {:?} do not match inputs {:?}",
                aug.shape(),
                data.x.shape()
            )));
        }
    }
    for b in 0..n {
        let s: f64 = data.y.row(b).iter().map(|&v| v as f64).sum();
        if (s - 1.0).abs() > 1e-4 || data.y.row(b).iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidValue(format!("target row {b} is not a distribution (sum {s})")));
        }
    }
    let mut report = TrainReport {
        epochs: Vec::with_capacity(cfg.epochs),
        stopped_early: false,
        best_epoch: None,
        wall_time_secs: 0.0,
    };
    if cfg.epochs == 0 || n == 0 {
        return Ok(report);
    }
    if n < 2 {
        return Err(Error::DegenerateBatch(n));
    }
    let phase = if monitor.phase.is_empty() { "fit" } else { monitor.phase };
    let diverged = |epoch: usize, detail: String| Error::Divergence {
        phase: phase.to_string(),
        epoch,
        detail,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptimizerState::<f32>::new(cfg.optimizer.clone(), network);
    let mut order: Vec<usize> = (0..n).collect();
    let mut best: Option<(f64, usize, Network<f32>)> = None;
    let lambda = data.consistency_weight;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sup_sum = 0.0f64;
        let mut cons_sum = 0.0f64;
        for idx in batches(n, cfg.batch_size, &order) {
            let xb = data.x.select_rows(idx);
            let yb = data.y.select_rows(idx);
            let (input, target) = match data.augmented {
                Some(aug) => {
                    let xa = aug.select_rows(idx);
                    (Tensor::concat(&[&xb, &xa])?, Tensor::concat(&[&yb, &yb])?)
                }
                None => (xb, yb),
            };
            let trace = network.forward_train(&input)?;
            let loss = cross_entropy_soft(&trace.probs, &target)?;
            if !loss.is_finite() {
                return Err(diverged(epoch, format!("non-finite supervised loss {loss}")));
            }
            sup_sum += loss * idx.len() as f64;
            let mut dz = cross_entropy_logit_grad(&trace.probs, &target)?;
            if data.augmented.is_some() {
                let m = idx.len();
                let clean = trace.probs.select_rows(&(0..m).collect::<Vec<_>>());
                let noisy = trace.probs.select_rows(&(m..2 * m).collect::<Vec<_>>());
                let c = consistency_loss(&clean, &noisy)?;
                cons_sum += c * m as f64;
                if lambda != 0.0 {
                    let (dc, dn) = consistency_grad(&clean, &noisy)?;
                    let dp = Tensor::concat(&[&dc, &dn])?;
                    let extra = softmax_backward(&trace.probs, &dp)?;
                    for (a, b) in dz.data_mut().iter_mut().zip(extra.data()) {
                        *a += (lambda as f32) * b;
                    }
                }
            }
            let (_, grads) = network.backward(&trace, &dz)?;
            opt.step(network, &grads).map_err(|e| match e {
                Error::Divergence { detail, .. } => diverged(epoch, detail),
                other => other,
            })?;
            network.commit_running_stats(&trace);
        }
        let mut rec = EpochRecord {
            epoch,
            supervised_loss: sup_sum / n as f64,
            consistency_loss: data.augmented.map(|_| cons_sum / n as f64),
            validation_loss: None,
            validation_accuracy: None,
            probe_consistency: None,
        };
        if let Some((vx, vy)) = monitor.validation {
            if vx.batch() > 0 {
                let p = predict_proba(network, vx)?;
                let vl = cross_entropy_soft(&p, vy)?;
                if !vl.is_finite() {
                    return Err(diverged(epoch, format!("non-finite validation loss {vl}")));
                }
                let correct = p
                    .argmax_rows()
                    .iter()
                    .zip(vy.argmax_rows())
                    .filter(|(a, b)| **a == *b)
                    .count();
                rec.validation_loss = Some(vl);
                rec.validation_accuracy = Some(correct as f64 / vx.batch() as f64);
            }
        }
        if let Some((clean, noisy)) = monitor.consistency_probe {
            rec.probe_consistency = Some(consistency_loss(&predict_proba(network, clean)?, &predict_proba(network, noisy)?)?);
        }
        let val_loss = rec.validation_loss;
        report.epochs.push(rec);

        if let (Some(vl), true) = (val_loss, cfg.patience > 0) {
            let improved = best.as_ref().is_none_or(|(b, _, _)| vl < *b);
            if improved {
                best = Some((vl, epoch, network.clone()));
            } else if epoch - best.as_ref().map(|b| b.1).unwrap_or(0) >= cfg.patience {
                report.stopped_early = true;
                break;
            }
        }
    }
    if let Some((_, epoch, net)) = best {
        *network = net;
        report.best_epoch = Some(epoch);
    }
    report.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Inference-mode class probabilities, one row per sample. Rows are computed
/// independently, so chunked parallel evaluation does not change results.
pub fn predict_proba(network: &Network<f32>, x: &Tensor) -> Result<ProbMatrix> {
    let n = x.batch();
    if n <= PREDICT_CHUNK {
        return network.forward(x);
    }
    let chunks: Vec<Vec<usize>> = (0..n)
        .step_by(PREDICT_CHUNK)
        .map(|s| (s..(s + PREDICT_CHUNK).min(n)).collect())
        .collect();
    let parts: Vec<ProbMatrix> = chunks
        .par_iter()
        .map(|idx| network.forward(&x.select_rows(idx)))
        .collect::<Result<_>>()?;
    Tensor::concat(&parts.iter().collect::<Vec<_>>())
}
