use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor};

pub(crate) fn pooled_dims(
    h: usize,
    w: usize,
    kernel: (usize, usize),
    stride: usize,
) -> Result<(usize, usize)> {
    if kernel.0 == 0 || kernel.1 == 0 || stride == 0 {
        return Err(Error::Config("pool window and stride must be positive".into()));
    }
    if kernel.0 > h || kernel.1 > w {
        return Err(Error::Config(format!(
            "{}x{} pool window larger than the {h}x{w} input",
            kernel.0, kernel.1
        )));
    }
    // Trailing rows/columns that do not fill a window are dropped.
    Ok(((h - kernel.0) / stride + 1, (w - kernel.1) / stride + 1))
}

/// Max pooling. Backward routes each gradient to the first maximal element
/// of its window in row-major order.
#[derive(Clone, Debug)]
pub struct MaxPool {
    kernel: (usize, usize),
    stride: usize,
    cache: Option<PoolCache>,
}

#[derive(Clone, Debug)]
struct PoolCache {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl MaxPool {
    pub fn new(kernel: (usize, usize), stride: usize) -> Self {
        Self {
            kernel,
            stride,
            cache: None,
        }
    }

    pub fn forward(&mut self, input: &Tensor, train: bool) -> Result<Tensor> {
        let s = Shape4::of(input)?;
        let (oh, ow) = pooled_dims(s.h, s.w, self.kernel, self.stride)?;
        let x = input.data();
        let mut out = Vec::with_capacity(s.n * s.c * oh * ow);
        let mut argmax = Vec::with_capacity(if train { out.capacity() } else { 0 });
        for plane in 0..s.n * s.c {
            let base = plane * s.h * s.w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + i * self.stride * s.w + j * self.stride;
                    for u in 0..self.kernel.0 {
                        let row = base + (i * self.stride + u) * s.w + j * self.stride;
                        for idx in row..row + self.kernel.1 {
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(x[best]);
                    if train {
                        argmax.push(best);
                    }
                }
            }
        }
        self.cache = train.then(|| PoolCache {
            input_shape: input.shape().to_vec(),
            argmax,
        });
        Tensor::new(&[s.n, s.c, oh, ow], out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("maxpool backward called without a cached forward".into()))?;
        if grad_out.len() != cache.argmax.len() {
            return Err(Error::Shape(format!(
                "maxpool grad_out {:?} does not match forward output",
                grad_out.shape()
            )));
        }
        let mut grad = Tensor::zeros(&cache.input_shape)?;
        let g = grad.data_mut();
        for (&idx, &v) in cache.argmax.iter().zip(grad_out.data()) {
            g[idx] += v;
        }
        Ok(grad)
    }
}
