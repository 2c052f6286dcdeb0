use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Fully connected layer computing `input · W + b`.
///
/// `weight` is row-major with shape `(in_features, out_features)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T = f32> {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn new(in_features: usize, out_features: usize) -> Result<Self> {
        if in_features == 0 || out_features == 0 {
            return Err(Error::Config(format!(
                "dense extents must be positive ({in_features} -> {out_features})"
            )));
        }
        Ok(Self {
            in_features,
            out_features,
            weight: vec![T::zero(); in_features * out_features],
            bias: vec![T::zero(); out_features],
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut d = Self::new(n, n).expect("n > 0");
        for i in 0..n {
            d.weight[i * n + i] = T::one();
        }
        d
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let limit = (6.0 / self.in_features as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("valid range");
        for w in &mut self.weight {
            *w = T::of(dist.sample(rng));
        }
        self.bias.iter_mut().for_each(|b| *b = T::zero());
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn check(&self, input: &Tensor<T>) -> Result<usize> {
        let s = input.shape();
        if s.len() != 2 || s[1] != self.in_features {
            return Err(Error::dim(format!(
                "dense input {:?} does not match weight [{}, {}]",
                s, self.in_features, self.out_features
            )));
        }
        Ok(s[0])
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let batch = self.check(input)?;
        let (n_in, n_out) = (self.in_features, self.out_features);
        let mut out = Vec::with_capacity(batch * n_out);
        for b in 0..batch {
            let x = input.row(b);
            let mut row = self.bias.clone();
            for (i, &xi) in x.iter().enumerate() {
                if xi == T::zero() {
                    continue;
                }
                let w = &self.weight[i * n_out..(i + 1) * n_out];
                for (acc, &wij) in row.iter_mut().zip(w) {
                    *acc = *acc + xi * wij;
                }
            }
            debug_assert_eq!(x.len(), n_in);
            out.extend(row);
        }
        Tensor::new(vec![batch, n_out], out)
    }

    /// Returns `(input_grad, weight_grad, bias_grad)`.
    pub fn backward(&self, input: &Tensor<T>, upstream: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
        let batch = self.check(input)?;
        let n_out = self.out_features;
        if upstream.shape() != [batch, n_out] {
            return Err(Error::dim(format!(
                "dense upstream gradient {:?} does not match output [{batch}, {n_out}]",
                upstream.shape()
            )));
        }
        let mut dx = Vec::with_capacity(input.len());
        let mut dw = vec![T::zero(); self.weight.len()];
        let mut db = vec![T::zero(); n_out];
        for b in 0..batch {
            let x = input.row(b);
            let g = upstream.row(b);
            for (acc, &gj) in db.iter_mut().zip(g) {
                *acc = *acc + gj;
            }
            for (i, &xi) in x.iter().enumerate() {
                let w = &self.weight[i * n_out..(i + 1) * n_out];
                let dwi = &mut dw[i * n_out..(i + 1) * n_out];
                let mut s = T::zero();
                for j in 0..n_out {
                    dwi[j] = dwi[j] + xi * g[j];
                    s = s + w[j] * g[j];
                }
                dx.push(s);
            }
        }
        Ok((Tensor::new(input.shape().to_vec(), dx)?, dw, db))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }

    #[test]
    fn identity_weights() {
        let d = Dense::<f32>::identity(3);
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap();
        assert_eq!(d.forward(&x).unwrap().data(), x.data());
    }

    #[test]
    fn all_ones_sum() {
        let mut d = Dense::<f32>::new(4, 1).unwrap();
        d.weight = vec![1.0; 4];
        let x = Tensor::new(vec![1, 4], vec![1.0; 4]).unwrap();
        assert_eq!(d.forward(&x).unwrap().data(), &[4.0]);
    }

    #[test]
    fn matrix_product_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut d = Dense::<f64>::new(8, 5).unwrap();
        d.weight = randn(&mut rng, 40);
        d.bias = randn(&mut rng, 5);
        let xd = randn(&mut rng, 3 * 8);
        let y = d.forward(&Tensor::new(vec![3, 8], xd.clone()).unwrap()).unwrap();
        for b in 0..3 {
            for j in 0..5 {
                let expect: f64 = d.bias[j] + (0..8).map(|i| xd[b * 8 + i] * d.weight[i * 5 + j]).sum::<f64>();
                assert!((y.data()[b * 5 + j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn width_mismatch() {
        let d = Dense::<f32>::new(4, 2).unwrap();
        let err = d.forward(&Tensor::zeros(vec![1, 3])).unwrap_err().to_string();
        assert!(err.contains("[1, 3]") && err.contains("[4, 2]"));
    }

    #[test]
    fn backward_matches_central_differences() {
        let h = 1e-5;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
            let mut d = Dense::<f64>::new(8, 5).unwrap();
            d.weight = randn(&mut rng, 40);
            d.bias = randn(&mut rng, 5);
            let x = Tensor::new(vec![3, 8], randn(&mut rng, 24)).unwrap();
            let up = Tensor::new(vec![3, 5], randn(&mut rng, 15)).unwrap();
            let loss = |d: &Dense<f64>, x: &Tensor<f64>| -> f64 {
                d.forward(x).unwrap().data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
            };
            let (dx, dw, db) = d.backward(&x, &up).unwrap();
            for i in 0..40 {
                let mut p = d.clone();
                p.weight[i] += h;
                let mut m = d.clone();
                m.weight[i] -= h;
                assert!(rel(dw[i], (loss(&p, &x) - loss(&m, &x)) / (2.0 * h)) < 1e-4);
            }
            for i in 0..5 {
                let mut p = d.clone();
                p.bias[i] += h;
                let mut m = d.clone();
                m.bias[i] -= h;
                assert!(rel(db[i], (loss(&p, &x) - loss(&m, &x)) / (2.0 * h)) < 1e-4);
            }
            for i in 0..24 {
                let mut xp = x.clone();
                xp.data_mut()[i] += h;
                let mut xm = x.clone();
                xm.data_mut()[i] -= h;
                assert!(rel(dx.data()[i], (loss(&d, &xp) - loss(&d, &xm)) / (2.0 * h)) < 1e-4);
            }
        }
    }
}
