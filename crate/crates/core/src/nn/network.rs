use std::fmt;

use crate::error::{Error, Result};
use crate::nn::activation::{relu, relu_backward, softmax};
use crate::nn::batchnorm::{BatchNorm1d, BatchNormCache};
use crate::nn::conv::Conv1d;
use crate::nn::dense::Dense;
use crate::nn::pool::MaxPool1d;
use crate::tensor::{ProbMatrix, Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T = f32> {
    Conv1d(Conv1d<T>),
    BatchNorm(BatchNorm1d<T>),
    Relu,
    MaxPool(MaxPool1d),
    Flatten,
    Dense(Dense<T>),
    Softmax,
}

impl<T> Layer<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv1d(_) => "conv1d",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu => "relu",
            Layer::MaxPool(_) => "pool",
            Layer::Flatten => "flatten",
            Layer::Dense(_) => "dense",
            Layer::Softmax => "softmax",
        }
    }
}

impl<T: Real> Layer<T> {
    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv1d(c) => c.param_count(),
            Layer::BatchNorm(b) => b.param_count(),
            Layer::Dense(d) => d.param_count(),
            _ => 0,
        }
    }

    /// Output shape (without the batch axis) for a given input shape.
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = || Error::dim(format!("{} layer cannot take input shape {:?}", self.kind(), input));
        match self {
            Layer::Conv1d(c) => match input {
                [ch, t] if *ch == c.in_channels => {
                    let out = c.output_len(*t).ok_or_else(bad)?;
                    Ok(vec![c.out_channels, out])
                }
                _ => Err(bad()),
            },
            Layer::BatchNorm(b) => match input {
                [ch, ..] if *ch == b.channels && input.len() <= 2 => Ok(input.to_vec()),
                _ => Err(bad()),
            },
            Layer::MaxPool(p) => match input {
                [ch, t] => Ok(vec![*ch, p.output_len(*t).ok_or_else(bad)?]),
                _ => Err(bad()),
            },
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Dense(d) => match input {
                [f] if *f == d.in_features => Ok(vec![d.out_features]),
                _ => Err(bad()),
            },
            Layer::Relu | Layer::Softmax => Ok(input.to_vec()),
        }
    }
}

#[derive(Clone, Debug)]
enum Cache<T> {
    None,
    BatchNorm(BatchNormCache<T>),
    Pool(Vec<usize>),
}

/// Activations recorded by a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    inputs: Vec<Tensor<T>>,
    caches: Vec<Cache<T>>,
    pub logits: Tensor<T>,
    pub probs: ProbMatrix<T>,
}

/// Parameter gradients in [`Network::params`] order.
pub type Gradients<T> = Vec<Vec<T>>;

/// An ordered layer stack ending in a softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T = f32> {
    layers: Vec<Layer<T>>,
    input_shape: Vec<usize>,
    classes: usize,
}

impl<T: Real> Network<T> {
    /// `input_shape` excludes the batch axis: `[channels, time]` or `[features]`.
    pub fn new(layers: Vec<Layer<T>>, input_shape: Vec<usize>) -> Result<Self> {
        if !matches!(layers.last(), Some(Layer::Softmax)) {
            return Err(Error::Config("network must end with a softmax layer".into()));
        }
        if layers[..layers.len() - 1].iter().any(|l| matches!(l, Layer::Softmax)) {
            return Err(Error::Config("softmax is only allowed as the final layer".into()));
        }
        let mut shape = input_shape.clone();
        for layer in &layers {
            shape = layer.output_shape(&shape)?;
        }
        match shape.as_slice() {
            [c] if *c >= 2 => Ok(Self {
                layers,
                input_shape,
                classes: *c,
            }),
            other => Err(Error::Config(format!(
                "network output must be a vector of at least 2 classes, got {other:?}"
            ))),
        }
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn params(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv1d(c) => out.extend([c.weight.as_slice(), c.bias.as_slice()]),
                Layer::BatchNorm(b) => out.extend([b.gamma.as_slice(), b.beta.as_slice()]),
                Layer::Dense(d) => out.extend([d.weight.as_slice(), d.bias.as_slice()]),
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv1d(c) => out.extend([c.weight.as_mut_slice(), c.bias.as_mut_slice()]),
                Layer::BatchNorm(b) => out.extend([b.gamma.as_mut_slice(), b.beta.as_mut_slice()]),
                Layer::Dense(d) => out.extend([d.weight.as_mut_slice(), d.bias.as_mut_slice()]),
                _ => {}
            }
        }
        out
    }

    /// Human-readable names matching [`Network::params`].
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let (a, b) = match layer {
                Layer::Conv1d(_) | Layer::Dense(_) => ("weight", "bias"),
                Layer::BatchNorm(_) => ("gamma", "beta"),
                _ => continue,
            };
            out.push(format!("{i}.{}.{a}", layer.kind()));
            out.push(format!("{i}.{}.{b}", layer.kind()));
        }
        out
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().len() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::dim(format!(
                "network expects input [batch, {}], got {:?}",
                self.input_shape.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", "),
                x.shape()
            )));
        }
        Ok(())
    }

    /// Inference-mode forward pass. Batch normalization uses running
    /// statistics, so each row depends only on its own sample.
    pub fn forward(&self, x: &Tensor<T>) -> Result<ProbMatrix<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = match layer {
                Layer::Conv1d(c) => c.forward(&h)?,
                Layer::BatchNorm(b) => b.forward_eval(&h)?,
                Layer::Relu => relu(&h),
                Layer::MaxPool(p) => p.forward(&h)?.0,
                Layer::Flatten => {
                    let w = h.row_len();
                    h.reshape(vec![x.batch(), w])?
                }
                Layer::Dense(d) => d.forward(&h)?,
                Layer::Softmax => softmax(&h)?,
            };
        }
        Ok(h)
    }

    /// Training-mode forward pass using batch statistics. Does not modify
    /// the network; see [`Network::commit_running_stats`].
    pub fn forward_train(&self, x: &Tensor<T>) -> Result<Trace<T>> {
        self.check_input(x)?;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut caches = Vec::with_capacity(n);
        let mut h = x.clone();
        for layer in &self.layers[..n - 1] {
            let (next, cache) = match layer {
                Layer::Conv1d(c) => (c.forward(&h)?, Cache::None),
                Layer::BatchNorm(b) => {
                    let (y, c) = b.forward_train(&h)?;
                    (y, Cache::BatchNorm(c))
                }
                Layer::Relu => (relu(&h), Cache::None),
                Layer::MaxPool(p) => {
                    let (y, arg) = p.forward(&h)?;
                    (y, Cache::Pool(arg))
                }
                Layer::Flatten => {
                    let w = h.row_len();
                    (h.clone().reshape(vec![x.batch(), w])?, Cache::None)
                }
                Layer::Dense(d) => (d.forward(&h)?, Cache::None),
                Layer::Softmax => unreachable!("softmax is final"),
            };
            inputs.push(h);
            caches.push(cache);
            h = next;
        }
        let probs = softmax(&h)?;
        Ok(Trace {
            inputs,
            caches,
            logits: h,
            probs,
        })
    }

    /// Back-propagates a gradient with respect to the logits (the softmax
    /// input). Returns the input gradient and the parameter gradients.
    pub fn backward(&self, trace: &Trace<T>, logit_grad: &Tensor<T>) -> Result<(Tensor<T>, Gradients<T>)> {
        if logit_grad.shape() != trace.logits.shape() {
            return Err(Error::dim(format!(
                "logit gradient {:?} does not match logits {:?}",
                logit_grad.shape(),
                trace.logits.shape()
            )));
        }
        let n = self.layers.len() - 1;
        let mut grads: Vec<(Vec<T>, Vec<T>)> = Vec::new();
        let mut g = logit_grad.clone();
        for i in (0..n).rev() {
            let input = &trace.inputs[i];
            g = match (&self.layers[i], &trace.caches[i]) {
                (Layer::Conv1d(c), _) => {
                    let (dx, dw, db) = c.backward(input, &g)?;
                    grads.push((dw, db));
                    dx
                }
                (Layer::BatchNorm(b), Cache::BatchNorm(cache)) => {
                    let (dx, dg, db) = b.backward(cache, &g)?;
                    grads.push((dg, db));
                    dx
                }
                (Layer::Relu, _) => relu_backward(input, &g)?,
                (Layer::MaxPool(p), Cache::Pool(arg)) => p.backward(input.shape(), arg, &g)?,
                (Layer::Flatten, _) => g.reshape(input.shape().to_vec())?,
                (Layer::Dense(d), _) => {
                    let (dx, dw, db) = d.backward(input, &g)?;
                    grads.push((dw, db));
                    dx
                }
                (layer, _) => {
                    return Err(Error::dim(format!("trace does not match {} layer {i}", layer.kind())));
                }
            };
        }
        let out = grads.into_iter().rev().flat_map(|(a, b)| [a, b]).collect();
        Ok((g, out))
    }

    /// Folds the batch statistics of a training pass into the running
    /// statistics of every batch-normalization layer.
    pub fn commit_running_stats(&mut self, trace: &Trace<T>) {
        for (layer, cache) in self.layers.iter_mut().zip(&trace.caches) {
            if let (Layer::BatchNorm(b), Cache::BatchNorm(c)) = (layer, cache) {
                b.update_running(c);
            }
        }
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::of(x.f64())).collect::<Vec<U>>();
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv1d(c) => Layer::Conv1d(Conv1d {
                    in_channels: c.in_channels,
                    out_channels: c.out_channels,
                    kernel: c.kernel,
                    stride: c.stride,
                    weight: conv(&c.weight),
                    bias: conv(&c.bias),
                }),
                Layer::BatchNorm(b) => Layer::BatchNorm(BatchNorm1d {
                    channels: b.channels,
                    gamma: conv(&b.gamma),
                    beta: conv(&b.beta),
                    running_mean: conv(&b.running_mean),
                    running_var: conv(&b.running_var),
                }),
                Layer::Dense(d) => Layer::Dense(Dense {
                    in_features: d.in_features,
                    out_features: d.out_features,
                    weight: conv(&d.weight),
                    bias: conv(&d.bias),
                }),
                Layer::Relu => Layer::Relu,
                Layer::MaxPool(p) => Layer::MaxPool(*p),
                Layer::Flatten => Layer::Flatten,
                Layer::Softmax => Layer::Softmax,
            })
            .collect();
        Network {
            layers,
            input_shape: self.input_shape.clone(),
            classes: self.classes,
        }
    }
}

impl<T: Real> fmt::Display for Network<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kinds: Vec<&str> = self.layers.iter().map(Layer::kind).collect();
        write!(
            f,
            "{} ({} parameters, {} classes)",
            kinds.join(" -> "),
            self.param_count(),
            self.classes
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn must_end_in_softmax() {
        let d = Dense::<f32>::new(3, 2).unwrap();
        assert!(Network::new(vec![Layer::Dense(d.clone())], vec![3]).is_err());
        assert!(Network::new(vec![Layer::Dense(d), Layer::Softmax], vec![3]).is_ok());
    }

    #[test]
    fn shape_inference_rejects_mismatch() {
        let d = Dense::<f32>::new(4, 2).unwrap();
        assert!(Network::new(vec![Layer::Dense(d), Layer::Softmax], vec![3]).is_err());
    }

    #[test]
    fn input_shape_checked() {
        let d = Dense::<f32>::new(3, 2).unwrap();
        let net = Network::new(vec![Layer::Dense(d), Layer::Softmax], vec![3]).unwrap();
        assert!(net.forward(&Tensor::zeros(vec![2, 4])).is_err());
        let p = net.forward(&Tensor::zeros(vec![2, 3])).unwrap();
        assert_eq!(p.data(), &[0.5; 4]);
    }
}
