use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::network::{Gradients, Network};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    /// Adaptive moment estimation.
    Adam,
    /// Plain gradient descent: `p -= lr * g`.
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState<T = f32> {
    pub config: OptimizerConfig,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new<U: Real>(config: OptimizerConfig, network: &Network<U>) -> Self {
        let shapes: Vec<usize> = network.params().iter().map(|p| p.len()).collect();
        let zeros = || shapes.iter().map(|&n| vec![T::zero(); n]).collect::<Vec<_>>();
        Self {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. Non-finite gradients abort before any parameter
    /// is touched.
    pub fn step(&mut self, network: &mut Network<T>, grads: &Gradients<T>) -> Result<()> {
        if grads.len() != self.first.len() || grads.iter().zip(&self.first).any(|(g, m)| g.len() != m.len()) {
            return Err(Error::dim("gradient shapes do not match optimizer accumulators"));
        }
        if let Some((i, _)) = grads
            .iter()
            .enumerate()
            .find(|(_, g)| g.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Divergence {
                phase: "optimizer step".into(),
                epoch: 0,
                detail: format!("non-finite gradient in parameter tensor {i}"),
            });
        }
        self.step += 1;
        let cfg = &self.config;
        let lr = T::of(cfg.learning_rate);
        let mut params = network.params_mut();
        match cfg.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pi, &gi) in p.iter_mut().zip(g) {
                        *pi = *pi - lr * gi;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
                let c1 = T::of(1.0 - cfg.beta1.powi(self.step as i32));
                let c2 = T::of(1.0 - cfg.beta2.powi(self.step as i32));
                let eps = T::of(cfg.epsilon);
                let one = T::one();
                for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let m = &mut self.first[k];
                    let v = &mut self.second[k];
                    for i in 0..p.len() {
                        let gi = g[i];
                        m[i] = b1 * m[i] + (one - b1) * gi;
                        v[i] = b2 * v[i] + (one - b2) * gi * gi;
                        let mhat = m[i] / c1;
                        let vhat = v[i] / c2;
                        p[i] = p[i] - lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::dense::Dense;
    use crate::nn::network::Layer;

    fn scalar_net(w: f32) -> Network<f32> {
        let mut d = Dense::new(1, 2).unwrap();
        d.weight = vec![w, 0.0];
        Network::new(vec![Layer::Dense(d), Layer::Softmax], vec![1]).unwrap()
    }

    fn weight(net: &Network<f32>) -> f32 {
        net.params()[0][0]
    }

    #[test]
    fn zero_gradient_is_identity() {
        for kind in [OptimizerKind::Adam, OptimizerKind::Sgd] {
            let mut net = scalar_net(0.3);
            let before = net.clone();
            let cfg = OptimizerConfig { kind, ..Default::default() };
            let mut opt = OptimizerState::new(cfg, &net);
            let zeros: Gradients<f32> = net.params().iter().map(|p| vec![0.0; p.len()]).collect();
            opt.step(&mut net, &zeros).unwrap();
            assert_eq!(net, before);
            assert_eq!(opt.step_count(), 1);
        }
    }

    #[test]
    fn plain_descent_scalar() {
        let mut net = scalar_net(1.0);
        let cfg = OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate: 0.1,
            ..Default::default()
        };
        let mut opt = OptimizerState::new(cfg, &net);
        let grads = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        opt.step(&mut net, &grads).unwrap();
        assert!((weight(&net) - 0.9).abs() < 1e-7);
    }

    #[test]
    fn adam_moves_against_gradient_sign() {
        let mut net = scalar_net(0.0);
        let mut opt = OptimizerState::new(OptimizerConfig::default(), &net);
        opt.step(&mut net, &vec![vec![2.5, -1.0], vec![0.0, 0.0]]).unwrap();
        let p = net.params();
        assert!(p[0][0] < 0.0 && p[0][1] > 0.0);
        // first Adam step has magnitude lr
        assert!((p[0][0] + 1e-3).abs() < 1e-6);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut net = scalar_net(0.5);
            let mut opt = OptimizerState::new(OptimizerConfig::default(), &net);
            for i in 0..10 {
                let g = (i as f32 * 0.37).sin();
                opt.step(&mut net, &vec![vec![g, -g], vec![0.1, 0.2]]).unwrap();
            }
            net
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_diverges() {
        let mut net = scalar_net(0.5);
        let before = net.clone();
        let mut opt = OptimizerState::new(OptimizerConfig::default(), &net);
        let err = opt.step(&mut net, &vec![vec![f32::NAN, 0.0], vec![0.0, 0.0]]).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
        assert_eq!(net, before);
        assert_eq!(opt.step_count(), 0);
    }
}
