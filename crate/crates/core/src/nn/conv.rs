use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Valid (unpadded) 1-D convolution over `(batch, channels, time)`.
///
/// Weights are laid out `[out_channels][in_channels][kernel]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d<T = f32> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Conv1d<T> {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
            return Err(Error::Config(format!(
                "conv1d extents must be positive (in {in_channels}, out {out_channels}, kernel {kernel}, stride {stride})"
            )));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight: vec![T::zero(); out_channels * in_channels * kernel],
            bias: vec![T::zero(); out_channels],
        })
    }

    /// He-uniform weights scaled by fan-in, zero bias.
    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let fan_in = (self.in_channels * self.kernel) as f64;
        let limit = (6.0 / fan_in).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("valid range");
        for w in &mut self.weight {
            *w = T::of(dist.sample(rng));
        }
        self.bias.iter_mut().for_each(|b| *b = T::zero());
    }

    pub fn output_len(&self, time: usize) -> Option<usize> {
        (time >= self.kernel).then(|| (time - self.kernel) / self.stride + 1)
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<(usize, usize, usize)> {
        let shape = input.shape();
        if shape.len() != 3 || shape[1] != self.in_channels {
            return Err(Error::dim(format!(
                "conv1d input {:?} does not match kernel [{}, {}, {}]",
                shape, self.out_channels, self.in_channels, self.kernel
            )));
        }
        let time = shape[2];
        let out_len = self.output_len(time).ok_or_else(|| {
            Error::dim(format!(
                "conv1d input {:?} is shorter than kernel [{}, {}, {}]",
                shape, self.out_channels, self.in_channels, self.kernel
            ))
        })?;
        Ok((shape[0], time, out_len))
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, time, out_len) = self.check_input(input)?;
        let (cin, cout, k, s) = (self.in_channels, self.out_channels, self.kernel, self.stride);
        let x = input.data();
        let mut out = vec![T::zero(); batch * cout * out_len];
        for b in 0..batch {
            let xb = &x[b * cin * time..(b + 1) * cin * time];
            for o in 0..cout {
                let row = &mut out[(b * cout + o) * out_len..(b * cout + o + 1) * out_len];
                row.iter_mut().for_each(|v| *v = self.bias[o]);
                for i in 0..cin {
                    let w = &self.weight[(o * cin + i) * k..(o * cin + i + 1) * k];
                    let xi = &xb[i * time..(i + 1) * time];
                    for (t, acc) in row.iter_mut().enumerate() {
                        let window = &xi[t * s..t * s + k];
                        let mut sum = T::zero();
                        for j in 0..k {
                            sum = sum + w[j] * window[j];
                        }
                        *acc = *acc + sum;
                    }
                }
            }
        }
        Tensor::new(vec![batch, cout, out_len], out)
    }

    /// Returns `(input_grad, weight_grad, bias_grad)`.
    pub fn backward(&self, input: &Tensor<T>, upstream: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
        let (batch, time, out_len) = self.check_input(input)?;
        let (cin, cout, k, s) = (self.in_channels, self.out_channels, self.kernel, self.stride);
        if upstream.shape() != [batch, cout, out_len] {
            return Err(Error::dim(format!(
                "conv1d upstream gradient {:?} does not match output [{batch}, {cout}, {out_len}]",
                upstream.shape()
            )));
        }
        let x = input.data();
        let dy = upstream.data();
        let mut dx = vec![T::zero(); x.len()];
        let mut dw = vec![T::zero(); self.weight.len()];
        let mut db = vec![T::zero(); cout];
        for b in 0..batch {
            for o in 0..cout {
                let g = &dy[(b * cout + o) * out_len..(b * cout + o + 1) * out_len];
                db[o] = db[o] + g.iter().copied().sum::<T>();
                for i in 0..cin {
                    let base = (b * cin + i) * time;
                    let widx = (o * cin + i) * k;
                    for (t, &gt) in g.iter().enumerate() {
                        if gt == T::zero() {
                            continue;
                        }
                        for j in 0..k {
                            dw[widx + j] = dw[widx + j] + gt * x[base + t * s + j];
                            dx[base + t * s + j] = dx[base + t * s + j] + gt * self.weight[widx + j];
                        }
                    }
                }
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

    fn conv(cin: usize, cout: usize, k: usize, w: Vec<f64>, b: Vec<f64>) -> Conv1d<f64> {
        let mut c = Conv1d::new(cin, cout, k, 1).unwrap();
        c.weight = w;
        c.bias = b;
        c
    }

    fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }

    #[test]
    fn identity_kernel() {
        let c = conv(1, 1, 1, vec![1.0], vec![0.0]);
        let x = Tensor::new(vec![1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(c.forward(&x).unwrap().data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn sum_kernel() {
        let c = conv(1, 1, 2, vec![1.0, 1.0], vec![0.0]);
        let x = Tensor::new(vec![1, 1, 3], vec![1.0, 1.0, 1.0]).unwrap();
        let y = c.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2]);
        assert_eq!(y.data(), &[2.0, 2.0]);
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for stride in [1, 2] {
            let mut c = Conv1d::<f64>::new(3, 8, 5, stride).unwrap();
            c.weight = randn(&mut rng, 8 * 3 * 5);
            c.bias = randn(&mut rng, 8);
            let xd = randn(&mut rng, 2 * 3 * 16);
            let x = Tensor::new(vec![2, 3, 16], xd.clone()).unwrap();
            let y = c.forward(&x).unwrap();
            let out_len = (16 - 5) / stride + 1;
            assert_eq!(y.shape(), &[2, 8, out_len]);
            for b in 0..2 {
                for o in 0..8 {
                    for t in 0..out_len {
                        let mut expect = c.bias[o];
                        for i in 0..3 {
                            for j in 0..5 {
                                expect += c.weight[o * 15 + i * 5 + j] * xd[b * 48 + i * 16 + t * stride + j];
                            }
                        }
                        let got = y.data()[(b * 8 + o) * out_len + t];
                        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
                    }
                }
            }
        }
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let c = Conv1d::<f32>::new(2, 4, 3, 1).unwrap();
        let err = c.forward(&Tensor::zeros(vec![1, 3, 8])).unwrap_err().to_string();
        assert!(err.contains("[1, 3, 8]") && err.contains("[4, 2, 3]"), "{err}");
        assert!(c.forward(&Tensor::zeros(vec![1, 2, 2])).is_err());
        let bad_up = Tensor::zeros(vec![1, 4, 5]);
        assert!(c.backward(&Tensor::zeros(vec![1, 2, 8]), &bad_up).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c = Conv1d::<f64>::new(2, 3, 3, 1).unwrap();
        c.init(&mut rng);
        let x = Tensor::new(vec![2, 2, 8], randn(&mut rng, 32)).unwrap();
        let (dx, dw, db) = c.backward(&x, &Tensor::zeros(vec![2, 3, 6])).unwrap();
        assert!(dx.data().iter().chain(&dw).chain(&db).all(|v| *v == 0.0));
    }

    #[test]
    fn identity_kernel_passes_gradient_through() {
        let c = conv(1, 1, 1, vec![1.0], vec![0.0]);
        let x = Tensor::new(vec![1, 1, 4], vec![0.3, -1.0, 2.0, 5.0]).unwrap();
        let up = Tensor::new(vec![1, 1, 4], vec![1.0, -2.0, 0.5, 4.0]).unwrap();
        let (dx, _, _) = c.backward(&x, &up).unwrap();
        assert_eq!(dx.data(), up.data());
    }

    #[test]
    fn backward_matches_central_differences() {
        // loss = sum(upstream * forward(x))
        let h = 1e-5;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let stride = 1 + (seed as usize % 2);
            let mut c = Conv1d::<f64>::new(2, 3, 3, stride).unwrap();
            c.weight = randn(&mut rng, c.weight.len());
            c.bias = randn(&mut rng, 3);
            let x = Tensor::new(vec![2, 2, 8], randn(&mut rng, 32)).unwrap();
            let out_len = c.output_len(8).unwrap();
            let up = Tensor::new(vec![2, 3, out_len], randn(&mut rng, 6 * out_len)).unwrap();
            let loss = |c: &Conv1d<f64>, x: &Tensor<f64>| -> f64 {
                c.forward(x).unwrap().data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
            };
            let (dx, dw, db) = c.backward(&x, &up).unwrap();
            let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            for i in 0..c.weight.len() {
                let mut p = c.clone();
                p.weight[i] += h;
                let mut m = c.clone();
                m.weight[i] -= h;
                let num = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
                assert!(rel(dw[i], num) < 1e-4);
            }
            for i in 0..3 {
                let mut p = c.clone();
                p.bias[i] += h;
                let mut m = c.clone();
                m.bias[i] -= h;
                let num = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
                assert!(rel(db[i], num) < 1e-4);
            }
            for i in 0..x.len() {
                let mut xp = x.clone();
                xp.data_mut()[i] += h;
                let mut xm = x.clone();
                xm.data_mut()[i] -= h;
                let num = (loss(&c, &xp) - loss(&c, &xm)) / (2.0 * h);
                assert!(rel(dx.data()[i], num) < 1e-4);
            }
        }
    }
}
