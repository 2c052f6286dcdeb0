//! Supervised and consistency losses over probability rows.
//!
//! Losses are accumulated in `f64` regardless of the element type.

use crate::error::{Error, Result};
use crate::tensor::{ProbMatrix, Real, Tensor};

pub const LOG_CLAMP: f64 = 1e-12;

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() || a.shape().len() != 2 {
        return Err(Error::dim(format!(
            "{what}: prediction {:?} and target {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `-(1/B) Σ_b Σ_i target_bi · ln(max(pred_bi, 1e-12))`.
pub fn cross_entropy_soft<T: Real>(pred: &ProbMatrix<T>, target: &ProbMatrix<T>) -> Result<f64> {
    same_shape(pred, target, "cross entropy")?;
    let batch = pred.batch();
    if batch == 0 {
        return Ok(0.0);
    }
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &q)| {
            let q = q.f64();
            if q == 0.0 {
                0.0
            } else {
                -q * p.f64().max(LOG_CLAMP).ln()
            }
        })
        .sum();
    Ok(total / batch as f64)
}

/// Gradient of [`cross_entropy_soft`] with respect to the logits feeding the
/// softmax that produced `pred`: `(p_j Σ_i q_i - q_j) / B`.
pub fn cross_entropy_logit_grad<T: Real>(pred: &ProbMatrix<T>, target: &ProbMatrix<T>) -> Result<Tensor<T>> {
    same_shape(pred, target, "cross entropy")?;
    let batch = pred.batch().max(1) as f64;
    let mut out = Vec::with_capacity(pred.len());
    for b in 0..pred.batch() {
        let p = pred.row(b);
        let q = target.row(b);
        let mass: f64 = q.iter().map(|v| v.f64()).sum();
        out.extend(p.iter().zip(q).map(|(&pj, &qj)| T::of((pj.f64() * mass - qj.f64()) / batch)));
    }
    Tensor::new(pred.shape().to_vec(), out)
}

/// `(1/B) Σ_b ‖clean_b - augmented_b‖²`.
pub fn consistency_loss<T: Real>(clean: &ProbMatrix<T>, augmented: &ProbMatrix<T>) -> Result<f64> {
    same_shape(clean, augmented, "consistency loss")?;
    let batch = clean.batch();
    if batch == 0 {
        return Ok(0.0);
    }
    let total: f64 = clean
        .data()
        .iter()
        .zip(augmented.data())
        .map(|(&a, &b)| (a.f64() - b.f64()).powi(2))
        .sum();
    Ok(total / batch as f64)
}

/// Gradients of [`consistency_loss`] with respect to both arguments.
pub fn consistency_grad<T: Real>(clean: &ProbMatrix<T>, augmented: &ProbMatrix<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    same_shape(clean, augmented, "consistency loss")?;
    let scale = 2.0 / clean.batch().max(1) as f64;
    let d: Vec<T> = clean
        .data()
        .iter()
        .zip(augmented.data())
        .map(|(&a, &b)| T::of(scale * (a.f64() - b.f64())))
        .collect();
    let neg: Vec<T> = d.iter().map(|&v| -v).collect();
    Ok((
        Tensor::new(clean.shape().to_vec(), d)?,
        Tensor::new(clean.shape().to_vec(), neg)?,
    ))
}
