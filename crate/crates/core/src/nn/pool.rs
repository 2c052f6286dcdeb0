use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Max pooling along the time axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaxPool1d {
    pub width: usize,
    pub stride: usize,
}

impl MaxPool1d {
    pub fn new(width: usize, stride: usize) -> Result<Self> {
        if width == 0 || stride == 0 {
            return Err(Error::Config(format!(
                "pool width ({width}) and stride ({stride}) must be positive"
            )));
        }
        Ok(Self { width, stride })
    }

    pub fn output_len(&self, time: usize) -> Option<usize> {
        (time >= self.width).then(|| (time - self.width) / self.stride + 1)
    }

    fn layout<T: Real>(&self, input: &Tensor<T>) -> Result<(usize, usize, usize)> {
        let s = input.shape();
        if s.len() != 3 {
            return Err(Error::dim(format!("max pool expects (batch, channels, time), got {s:?}")));
        }
        let out = self.output_len(s[2]).ok_or_else(|| {
            Error::dim(format!("pool width {} exceeds time length of input {:?}", self.width, s))
        })?;
        Ok((s[0] * s[1], s[2], out))
    }

    /// Returns the pooled tensor and, per output element, the flat input index
    /// of the selected maximum (first occurrence on ties).
    pub fn forward<T: Real>(&self, input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
        let (rows, time, out_len) = self.layout(input)?;
        let x = input.data();
        let mut out = Vec::with_capacity(rows * out_len);
        let mut arg = Vec::with_capacity(rows * out_len);
        for r in 0..rows {
            for t in 0..out_len {
                let start = r * time + t * self.stride;
                let mut best = start;
                for i in start + 1..start + self.width {
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
        let s = input.shape();
        Ok((Tensor::new(vec![s[0], s[1], out_len], out)?, arg))
    }

    pub fn backward<T: Real>(&self, input_shape: &[usize], argmax: &[usize], upstream: &Tensor<T>) -> Result<Tensor<T>> {
        if upstream.len() != argmax.len() {
            return Err(Error::dim(format!(
                "pool upstream gradient {:?} does not match {} pooled outputs",
                upstream.shape(),
                argmax.len()
            )));
        }
        let mut dx = Tensor::zeros(input_shape.to_vec());
        let d = dx.data_mut();
        for (&i, &g) in argmax.iter().zip(upstream.data()) {
            d[i] = d[i] + g;
        }
        Ok(dx)
    }
}
