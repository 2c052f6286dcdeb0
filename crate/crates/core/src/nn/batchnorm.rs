use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over `(batch, channels, time)` or
/// `(batch, channels)` inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm1d<T = f32> {
    pub channels: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

/// Values saved by a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    /// Batch mean and unbiased variance, for the running-statistics update.
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

impl<T: Real> BatchNorm1d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    fn layout(&self, input: &Tensor<T>) -> Result<(usize, usize)> {
        let s = input.shape();
        let ok = matches!(s.len(), 2 | 3) && s[1] == self.channels;
        if !ok {
            return Err(Error::dim(format!(
                "batchnorm over {} channels cannot take input {:?}",
                self.channels, s
            )));
        }
        Ok((s[0], if s.len() == 3 { s[2] } else { 1 }))
    }

    pub fn forward_train(&self, input: &Tensor<T>) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        let (batch, time) = self.layout(input)?;
        if batch < 2 {
            return Err(Error::DegenerateBatch(batch));
        }
        let c = self.channels;
        let x = input.data();
        let m = (batch * time) as f64;
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        for b in 0..batch {
            for ch in 0..c {
                let row = &x[(b * c + ch) * time..(b * c + ch + 1) * time];
                mean[ch] += row.iter().map(|v| v.f64()).sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        for b in 0..batch {
            for ch in 0..c {
                let row = &x[(b * c + ch) * time..(b * c + ch + 1) * time];
                var[ch] += row.iter().map(|v| (v.f64() - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= m);
        let inv_std: Vec<T> = var.iter().map(|v| T::of(1.0 / (v + BN_EPSILON).sqrt())).collect();
        let mean_t: Vec<T> = mean.iter().map(|&v| T::of(v)).collect();

        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for b in 0..batch {
            for ch in 0..c {
                let base = (b * c + ch) * time;
                for t in 0..time {
                    let h = (x[base + t] - mean_t[ch]) * inv_std[ch];
                    xhat[base + t] = h;
                    out[base + t] = self.gamma[ch] * h + self.beta[ch];
                }
            }
        }
        let unbiased = m / (m - 1.0);
        let cache = BatchNormCache {
            xhat,
            inv_std,
            batch_mean: mean,
            batch_var: var.iter().map(|v| v * unbiased).collect(),
        };
        Ok((Tensor::new(input.shape().to_vec(), out)?, cache))
    }

    pub fn forward_eval(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, time) = self.layout(input)?;
        let c = self.channels;
        let scale: Vec<T> = (0..c)
            .map(|ch| self.gamma[ch] * T::of(1.0 / (self.running_var[ch].f64() + BN_EPSILON).sqrt()))
            .collect();
        let mut out = input.data().to_vec();
        for b in 0..batch {
            for ch in 0..c {
                let base = (b * c + ch) * time;
                for v in &mut out[base..base + time] {
                    *v = (*v - self.running_mean[ch]) * scale[ch] + self.beta[ch];
                }
            }
        }
        Tensor::new(input.shape().to_vec(), out)
    }

    /// Returns `(input_grad, gamma_grad, beta_grad)`.
    pub fn backward(&self, cache: &BatchNormCache<T>, upstream: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
        let (batch, time) = self.layout(upstream)?;
        if upstream.len() != cache.xhat.len() {
            return Err(Error::dim(format!(
                "batchnorm upstream gradient {:?} does not match cached activations",
                upstream.shape()
            )));
        }
        let c = self.channels;
        let dy = upstream.data();
        let m = (batch * time) as f64;
        let mut sum_dy = vec![0.0f64; c];
        let mut sum_dy_xhat = vec![0.0f64; c];
        for b in 0..batch {
            for ch in 0..c {
                let base = (b * c + ch) * time;
                for t in 0..time {
                    let g = dy[base + t].f64();
                    sum_dy[ch] += g;
                    sum_dy_xhat[ch] += g * cache.xhat[base + t].f64();
                }
            }
        }
        let mut dx = vec![T::zero(); dy.len()];
        for b in 0..batch {
            for ch in 0..c {
                let base = (b * c + ch) * time;
                let k = self.gamma[ch].f64() * cache.inv_std[ch].f64() / m;
                for t in 0..time {
                    let v = m * dy[base + t].f64() - sum_dy[ch] - cache.xhat[base + t].f64() * sum_dy_xhat[ch];
                    dx[base + t] = T::of(k * v);
                }
            }
        }
        let dgamma = sum_dy_xhat.iter().map(|&v| T::of(v)).collect();
        let dbeta = sum_dy.iter().map(|&v| T::of(v)).collect();
        Ok((Tensor::new(upstream.shape().to_vec(), dx)?, dgamma, dbeta))
    }

    /// Exponential moving average of the batch statistics.
    pub fn update_running(&mut self, cache: &BatchNormCache<T>) {
        for ch in 0..self.channels {
            let rm = self.running_mean[ch].f64();
            let rv = self.running_var[ch].f64();
            self.running_mean[ch] = T::of((1.0 - BN_MOMENTUM) * rm + BN_MOMENTUM * cache.batch_mean[ch]);
            self.running_var[ch] = T::of(((1.0 - BN_MOMENTUM) * rv + BN_MOMENTUM * cache.batch_var[ch]).max(0.0));
        }
    }
}
