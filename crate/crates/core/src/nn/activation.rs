use crate::error::{Error, Result};
use crate::tensor::{ProbMatrix, Real, Tensor};

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let data = input.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}

/// Gradient of ReLU given the layer input. The kink at zero takes slope zero.
pub fn relu_backward<T: Real>(input: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != upstream.shape() {
        return Err(Error::dim(format!(
            "relu upstream gradient {:?} does not match input {:?}",
            upstream.shape(),
            input.shape()
        )));
    }
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// Row-wise softmax of a `(batch, classes)` logit matrix.
///
/// Each row is shifted by its maximum before exponentiation, and the
/// exponentials are summed in `f64`.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<ProbMatrix<T>> {
    if logits.shape().len() != 2 {
        return Err(Error::dim(format!("softmax expects (batch, classes), got {:?}", logits.shape())));
    }
    if let Some(bad) = logits.data().iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidValue(format!("softmax received non-finite logit {bad}")));
    }
    let classes = logits.shape()[1];
    let mut out = Vec::with_capacity(logits.len());
    let mut buf = vec![0.0f64; classes];
    for b in 0..logits.batch() {
        let row = logits.row(b);
        let max = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (e, v) in buf.iter_mut().zip(row) {
            *e = (v.f64() - max).exp();
            sum += *e;
        }
        out.extend(buf.iter().map(|e| T::of(e / sum)));
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Maps a gradient with respect to softmax outputs back to the logits:
/// `dz_j = p_j (dp_j - Σ_i dp_i p_i)`.
pub fn softmax_backward<T: Real>(probs: &ProbMatrix<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    if probs.shape() != upstream.shape() {
        return Err(Error::dim(format!(
            "softmax upstream gradient {:?} does not match probabilities {:?}",
            upstream.shape(),
            probs.shape()
        )));
    }
    let mut out = Vec::with_capacity(probs.len());
    for b in 0..probs.batch() {
        let p = probs.row(b);
        let g = upstream.row(b);
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a.f64() * b.f64()).sum();
        out.extend(p.iter().zip(g).map(|(&pj, &gj)| T::of(pj.f64() * (gj.f64() - dot))));
    }
    Tensor::new(probs.shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sm(v: &[f64]) -> Vec<f64> {
        softmax(&Tensor::new(vec![1, v.len()], v.to_vec()).unwrap()).unwrap().into_data()
    }

    #[test]
    fn symmetric_logits() {
        assert_eq!(sm(&[0.0, 0.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let p = sm(&[1000.0, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1] >= 0.0 && p[1] < 1e-12);
        let p = softmax(&Tensor::new(vec![1, 3], vec![1e4f32, -1e4, 0.0]).unwrap()).unwrap();
        assert!(p.is_finite());
    }

    #[test]
    fn direct_evaluation() {
        let p = sm(&[1.0, 2.0, 3.0]);
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        for (i, v) in p.iter().enumerate() {
            assert!((v - ((i + 1) as f64).exp() / z).abs() < 1e-15);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nan_is_rejected() {
        let t = Tensor::new(vec![1, 2], vec![f32::NAN, 0.0]).unwrap();
        assert!(matches!(softmax(&t), Err(Error::InvalidValue(_))));
    }

    #[test]
    fn relu_gradient_masks_negative_inputs() {
        let x = Tensor::new(vec![1, 4], vec![-1.0f64, 0.0, 0.5, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 0.5, 2.0]);
        let g = relu_backward(&x, &Tensor::new(vec![1, 4], vec![1.0; 4]).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn softmax_backward_matches_central_differences() {
        let z = vec![0.3, -1.2, 2.0, 0.1];
        let up = vec![0.7, -0.4, 1.1, 0.2];
        let loss = |z: &[f64]| -> f64 { sm(z).iter().zip(&up).map(|(a, b)| a * b).sum() };
        let p = Tensor::new(vec![1, 4], sm(&z)).unwrap();
        let dz = softmax_backward(&p, &Tensor::new(vec![1, 4], up.clone()).unwrap()).unwrap();
        for i in 0..4 {
            let mut zp = z.clone();
            zp[i] += 1e-5;
            let mut zm = z.clone();
            zm[i] -= 1e-5;
            let num = (loss(&zp) - loss(&zm)) / 2e-5;
            assert!((dz.data()[i] - num).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn rows_are_distributions(v in proptest::collection::vec(-1e4f64..1e4, 2..12)) {
            let p = sm(&v);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
        }

        #[test]
        fn f32_rows_are_distributions(v in proptest::collection::vec(-1e4f32..1e4, 2..12)) {
            let p = softmax(&Tensor::new(vec![1, v.len()], v).unwrap()).unwrap();
            let s: f64 = p.data().iter().map(|x| *x as f64).sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
            prop_assert!(p.data().iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }
}
