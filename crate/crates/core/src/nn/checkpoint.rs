//! JSON checkpoint layout for [`Network`].
//!
//! ```json
//! { "format_version": 1, "config_hash": "…", "input_shape": [3, 32], "classes": 7,
//!   "layers": [ { "kind": "conv1d", "in_channels": 3, …, "weight": [...], "bias": [...] },
//!               { "kind": "batchnorm", "channels": 32, "gamma": [...], "beta": [...],
//!                 "running_mean": [...], "running_var": [...] },
//!               { "kind": "relu" }, { "kind": "pool", "width": 2, "stride": 2 }, … ] }
//! ```
//!
//! Values are written as shortest round-trip decimals of the `f64` widening of
//! each `f32`, so save/load is value-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::batchnorm::BatchNorm1d;
use crate::nn::conv::Conv1d;
use crate::nn::dense::Dense;
use crate::nn::network::{Layer, Network};
use crate::nn::pool::MaxPool1d;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointFile {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub input_shape: Vec<usize>,
    pub classes: usize,
    pub layers: Vec<LayerRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerRecord {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    },
    Batchnorm {
        channels: usize,
        gamma: Vec<f64>,
        beta: Vec<f64>,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
    },
    Relu,
    Pool {
        width: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        in_features: usize,
        out_features: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    },
    Softmax,
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn narrow(v: Vec<f64>, expect: usize, what: &str) -> Result<Vec<f32>> {
    if v.len() != expect {
        return Err(Error::Checkpoint(format!("{what} has {} values, expected {expect}", v.len())));
    }
    v.into_iter()
        .map(|x| {
            let n = x as f32;
            if n as f64 == x {
                Ok(n)
            } else {
                Err(Error::Checkpoint(format!("{what} value {x} is not an exact f32")))
            }
        })
        .collect()
}

impl CheckpointFile {
    pub fn from_network(net: &Network<f32>, config_hash: Option<String>) -> Self {
        let layers = net
            .layers()
            .iter()
            .map(|l| match l {
                Layer::Conv1d(c) => LayerRecord::Conv1d {
                    in_channels: c.in_channels,
                    out_channels: c.out_channels,
                    kernel: c.kernel,
                    stride: c.stride,
                    weight: widen(&c.weight),
                    bias: widen(&c.bias),
                },
                Layer::BatchNorm(b) => LayerRecord::Batchnorm {
                    channels: b.channels,
                    gamma: widen(&b.gamma),
                    beta: widen(&b.beta),
                    running_mean: widen(&b.running_mean),
                    running_var: widen(&b.running_var),
                },
                Layer::Relu => LayerRecord::Relu,
                Layer::MaxPool(p) => LayerRecord::Pool {
                    width: p.width,
                    stride: p.stride,
                },
                Layer::Flatten => LayerRecord::Flatten,
                Layer::Dense(d) => LayerRecord::Dense {
                    in_features: d.in_features,
                    out_features: d.out_features,
                    weight: widen(&d.weight),
                    bias: widen(&d.bias),
                },
                Layer::Softmax => LayerRecord::Softmax,
            })
            .collect();
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config_hash,
            input_shape: net.input_shape().to_vec(),
            classes: net.classes(),
            layers,
        }
    }

    pub fn into_network(self) -> Result<Network<f32>> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                self.format_version
            )));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, rec) in self.layers.into_iter().enumerate() {
            let layer = match rec {
                LayerRecord::Conv1d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    weight,
                    bias,
                } => {
                    let mut c = Conv1d::new(in_channels, out_channels, kernel, stride)?;
                    c.weight = narrow(weight, c.weight.len(), &format!("layer {i} weight"))?;
                    c.bias = narrow(bias, out_channels, &format!("layer {i} bias"))?;
                    Layer::Conv1d(c)
                }
                LayerRecord::Batchnorm {
                    channels,
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    let b = BatchNorm1d {
                        channels,
                        gamma: narrow(gamma, channels, &format!("layer {i} gamma"))?,
                        beta: narrow(beta, channels, &format!("layer {i} beta"))?,
                        running_mean: narrow(running_mean, channels, &format!("layer {i} running_mean"))?,
                        running_var: narrow(running_var, channels, &format!("layer {i} running_var"))?,
                    };
                    if b.running_var.iter().any(|v| *v < 0.0) {
                        return Err(Error::Checkpoint(format!("layer {i} has negative running variance")));
                    }
                    Layer::BatchNorm(b)
                }
                LayerRecord::Relu => Layer::Relu,
                LayerRecord::Pool { width, stride } => Layer::MaxPool(MaxPool1d::new(width, stride)?),
                LayerRecord::Flatten => Layer::Flatten,
                LayerRecord::Dense {
                    in_features,
                    out_features,
                    weight,
                    bias,
                } => {
                    let mut d = Dense::new(in_features, out_features)?;
                    d.weight = narrow(weight, d.weight.len(), &format!("layer {i} weight"))?;
                    d.bias = narrow(bias, out_features, &format!("layer {i} bias"))?;
                    Layer::Dense(d)
                }
                LayerRecord::Softmax => Layer::Softmax,
            };
            layers.push(layer);
        }
        let net = Network::new(layers, self.input_shape)?;
        if net.classes() != self.classes {
            return Err(Error::Checkpoint(format!(
                "checkpoint declares {} classes but its layers produce {}",
                self.classes,
                net.classes()
            )));
        }
        Ok(net)
    }
}

pub fn save_checkpoint(net: &Network<f32>, config_hash: Option<String>, path: &Path) -> Result<()> {
    let file = CheckpointFile::from_network(net, config_hash);
    let text = serde_json::to_string_pretty(&file).map_err(|e| Error::Checkpoint(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Network<f32>, Option<String>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let hash = file.config_hash.clone();
    Ok((file.into_network()?, hash))
}
