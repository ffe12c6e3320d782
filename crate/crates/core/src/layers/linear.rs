use super::Param;
use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Fully-connected layer: `y = x W^T + b` on inputs flattened to `(N, in)`.
#[derive(Clone, Debug)]
pub struct Linear {
    /// `(out, in)`
    pub weight: Param,
    /// `(out)`
    pub bias: Param,
    cache: Option<Tensor>,
}

impl Linear {
    /// Weights drawn from N(0, 1 / fan_in), biases zero.
    pub fn new(in_features: usize, out_features: usize, seed: u64) -> Result<Self> {
        let weight = Tensor::randn(&[out_features, in_features], seed)?
            .scale((1.0 / in_features as f64).sqrt());
        Self::from_weights(weight, Tensor::zeros(&[out_features])?)
    }

    pub fn from_weights(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::Shape(format!(
                "fc weight {:?} and bias {:?} are inconsistent",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self {
            weight: Param::new(weight, true),
            bias: Param::new(bias, false),
            cache: None,
        })
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward(&mut self, input: &Tensor, train: bool) -> Result<Tensor> {
        let n = input.shape()[0];
        let (fin, fout) = (self.in_features(), self.out_features());
        if input.len() != n * fin {
            return Err(Error::Shape(format!(
                "fc expects {fin} features per sample, got input {:?}",
                input.shape()
            )));
        }
        let mut out = Vec::with_capacity(n * fout);
        for _ in 0..n {
            out.extend_from_slice(self.bias.value.data());
        }
        gemm(n, fin, fout, 1.0, input.data(), false, self.weight.value.data(), true, 1.0, &mut out);
        self.cache = train.then(|| input.clone());
        Tensor::new(&[n, fout], out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self
            .cache
            .take()
            .ok_or_else(|| Error::State("fc backward called without a cached forward".into()))?;
        let n = input.shape()[0];
        let (fin, fout) = (self.in_features(), self.out_features());
        if grad_out.shape() != [n, fout] {
            return Err(Error::Shape(format!(
                "fc grad_out {:?}, expected [{n}, {fout}]",
                grad_out.shape()
            )));
        }
        let g = grad_out.data();
        gemm(fout, n, fin, 1.0, g, true, input.data(), false, 1.0, self.weight.grad.data_mut());
        let gb = self.bias.grad.data_mut();
        for row in g.chunks(fout) {
            for (b, v) in gb.iter_mut().zip(row) {
                *b += v;
            }
        }
        let mut gx = vec![0.0; n * fin];
        gemm(n, fout, fin, 1.0, g, false, self.weight.value.data(), false, 0.0, &mut gx);
        Tensor::new(input.shape(), gx)
    }
}
