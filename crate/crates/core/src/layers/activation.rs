use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `max(0, x)`. The subgradient at exactly 0 is taken as 0.
#[derive(Clone, Debug, Default)]
pub struct Relu {
    input: Option<Tensor>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, input: &Tensor, train: bool) -> Result<Tensor> {
        self.input = train.then(|| input.clone());
        Ok(input.map(|v| v.max(0.0)))
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self
            .input
            .take()
            .ok_or_else(|| Error::State("relu backward called without a cached forward".into()))?;
        if input.shape() != grad_out.shape() {
            return Err(Error::Shape(format!(
                "relu grad_out {:?} does not match input {:?}",
                grad_out.shape(),
                input.shape()
            )));
        }
        let data = input
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
            .collect();
        Tensor::new(input.shape(), data)
    }
}
