//! Shape-tagged dense arrays.
//!
//! Activations flow through the network as `(batch, channels, time)` or
//! `(batch, features)` tensors stored contiguously in row-major order.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating-point element type usable by the layers.
///
/// Training and inference run in `f32`; gradient checking runs the same
/// code in `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable float")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading extent, the batch size.
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Number of values per batch entry.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows `indices` gathered into a new tensor with the same trailing shape.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let w = self.row_len();
        let mut data = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        if shape.is_empty() {
            shape.push(0);
        }
        shape[0] = indices.len();
        Self { shape, data }
    }

    /// Stacks tensors along the batch axis.
    pub fn concat(parts: &[&Tensor<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("cannot concatenate zero tensors"))?;
        let tail = &first.shape[1..];
        let mut batch = 0;
        let mut data = Vec::new();
        for p in parts {
            if &p.shape[1..] != tail {
                return Err(Error::dim(format!(
                    "cannot concatenate {:?} with {:?}",
                    first.shape, p.shape
                )));
            }
            batch += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = batch;
        Ok(Self { shape, data })
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }
}

/// Per-sample class-probability rows.
pub type ProbMatrix<T = f32> = Tensor<T>;

impl<T: Real> Tensor<T> {
    /// Builds a `(rows, classes)` matrix of one-hot rows.
    pub fn one_hot(labels: &[usize], classes: usize) -> Result<Self> {
        let mut data = vec![T::zero(); labels.len() * classes];
        for (i, &l) in labels.iter().enumerate() {
            if l >= classes {
                return Err(Error::InvalidValue(format!(
                    "label {l} out of range for {classes} classes"
                )));
            }
            data[i * classes + l] = T::one();
        }
        Tensor::new(vec![labels.len(), classes], data)
    }

    /// Index of the largest entry in each row, ties resolved to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.batch()).map(|i| argmax(self.row(i))).collect()
    }
}

pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.row_len(), 3);
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.5f32, 0.5]), 0);
        assert_eq!(argmax(&[0.1f32, 0.7, 0.7]), 1);
    }

    #[test]
    fn select_and_concat() {
        let t = Tensor::<f32>::new(vec![3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let s = t.select_rows(&[2, 0]);
        assert_eq!(s.data(), &[5., 6., 1., 2.]);
        let c = Tensor::concat(&[&s, &t]).unwrap();
        assert_eq!(c.shape(), &[5, 2]);
    }
}
