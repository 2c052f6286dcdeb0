//! Finite-difference verification of the analytic backward pass.
//!
//! The network is cast to `f64` and the scalar loss is the soft cross
//! entropy of a training-mode forward pass. A seeded sample of entries from
//! every parameter tensor (and from the input) is perturbed by `±step`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::nn::loss::{cross_entropy_logit_grad, cross_entropy_soft};
use crate::nn::network::{Gradients, Network};
use crate::tensor::{ProbMatrix, Real, Tensor};

#[derive(Clone, Debug)]
pub struct GradcheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Entries checked per parameter tensor; tensors smaller than this are
    /// checked exhaustively.
    pub samples_per_tensor: usize,
    /// Lower bound on the relative-error denominator, so that gradients
    /// that are zero up to round-off do not dominate the report.
    pub magnitude_floor: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            samples_per_tensor: 24,
            magnitude_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub max_relative_error: f64,
    /// Parameter (or `input`) name and flat index of the worst entry.
    pub worst_entry: String,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

pub type AnalyticGrad = dyn Fn(&Network<f64>, &Tensor<f64>, &ProbMatrix<f64>) -> Result<(Tensor<f64>, Gradients<f64>)>;

/// The production backward pass: fused softmax/cross-entropy logit gradient
/// followed by [`Network::backward`].
pub fn analytic_gradients(net: &Network<f64>, x: &Tensor<f64>, target: &ProbMatrix<f64>) -> Result<(Tensor<f64>, Gradients<f64>)> {
    let trace = net.forward_train(x)?;
    let dz = cross_entropy_logit_grad(&trace.probs, target)?;
    net.backward(&trace, &dz)
}

pub fn gradcheck<T: Real>(
    network: &Network<T>,
    x: &Tensor<T>,
    target: &ProbMatrix<T>,
    cfg: &GradcheckConfig,
) -> Result<GradcheckReport> {
    gradcheck_with(network, x, target, cfg, &analytic_gradients)
}

/// Like [`gradcheck`] but with a caller-supplied analytic gradient, which
/// lets tests confirm that a broken backward pass is caught.
pub fn gradcheck_with<T: Real>(
    network: &Network<T>,
    x: &Tensor<T>,
    target: &ProbMatrix<T>,
    cfg: &GradcheckConfig,
    analytic: &AnalyticGrad,
) -> Result<GradcheckReport> {
    let net = network.cast::<f64>();
    let x = x.cast::<f64>();
    let target = target.cast::<f64>();
    let (dx, grads) = analytic(&net, &x, &target)?;

    let loss_of = |n: &Network<f64>, x: &Tensor<f64>| -> Result<f64> {
        cross_entropy_soft(&n.forward_train(x)?.probs, &target)
    };
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(cfg.magnitude_floor);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut worst = (0.0f64, String::from("none"));
    let mut checked = 0;
    let names = net.param_names();
    let lens: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
    let h = cfg.step;

    for (k, &len) in lens.iter().enumerate() {
        for idx in pick(&mut rng, len, cfg.samples_per_tensor) {
            let mut plus = net.clone();
            plus.params_mut()[k][idx] += h;
            let mut minus = net.clone();
            minus.params_mut()[k][idx] -= h;
            let num = (loss_of(&plus, &x)? - loss_of(&minus, &x)?) / (2.0 * h);
            let e = rel(grads[k][idx], num);
            checked += 1;
            if e > worst.0 || !e.is_finite() {
                worst = (e, format!("{}[{idx}]", names[k]));
            }
        }
    }
    for idx in pick(&mut rng, x.len(), cfg.samples_per_tensor) {
        let mut xp = x.clone();
        xp.data_mut()[idx] += h;
        let mut xm = x.clone();
        xm.data_mut()[idx] -= h;
        let num = (loss_of(&net, &xp)? - loss_of(&net, &xm)?) / (2.0 * h);
        let e = rel(dx.data()[idx], num);
        checked += 1;
        if e > worst.0 || !e.is_finite() {
            worst = (e, format!("input[{idx}]"));
        }
    }
    Ok(GradcheckReport {
        max_relative_error: worst.0,
        worst_entry: worst.1,
        checked,
        tolerance: cfg.tolerance,
        passed: worst.0 <= cfg.tolerance,
    })
}

fn pick(rng: &mut ChaCha8Rng, len: usize, n: usize) -> Vec<usize> {
    if len <= n {
        (0..len).collect()
    } else {
        let mut v = sample(rng, len, n).into_vec();
        v.sort_unstable();
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::dense::Dense;
    use crate::nn::network::Layer;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn linear_net(rng: &mut ChaCha8Rng) -> Network<f64> {
        let mut d = Dense::new(6, 3).unwrap();
        d.weight = (0..18).map(|_| rng.sample(StandardNormal)).collect();
        d.bias = (0..3).map(|_| rng.sample(StandardNormal)).collect();
        Network::new(vec![Layer::Dense(d), Layer::Softmax], vec![6]).unwrap()
    }

    fn batch(rng: &mut ChaCha8Rng) -> (Tensor<f64>, ProbMatrix<f64>) {
        let x = Tensor::new(vec![4, 6], (0..24).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
        (x, Tensor::one_hot(&[0, 1, 2, 1], 3).unwrap())
    }

    #[test]
    fn single_dense_layer_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = linear_net(&mut rng);
        let (x, y) = batch(&mut rng);
        let r = gradcheck(&net, &x, &y, &GradcheckConfig { tolerance: 1e-6, ..Default::default() }).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.checked, 18 + 3 + 24);
    }

    #[test]
    fn corrupted_backward_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = linear_net(&mut rng);
        let (x, y) = batch(&mut rng);
        let broken = |n: &Network<f64>, x: &Tensor<f64>, t: &ProbMatrix<f64>| {
            let (dx, mut g) = analytic_gradients(n, x, t)?;
            g[0].iter_mut().for_each(|v| *v *= 1.5);
            Ok((dx, g))
        };
        let r = gradcheck_with(&net, &x, &y, &GradcheckConfig::default(), &broken).unwrap();
        assert!(!r.passed);
        assert!(r.max_relative_error > 0.1);
        assert!(r.worst_entry.contains("dense.weight"), "{}", r.worst_entry);
    }
}
