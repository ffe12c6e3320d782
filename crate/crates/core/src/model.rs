use crate::error::{Error, Result};
use crate::layers::{Conv2d, Layer, LayerSpec, Linear, MaxPool, Param, Relu};
use crate::ssim::{SsimConstants, SsimLayer};
use crate::tensor::Tensor;

/// A layer chain over a fixed `(C, H, W)` input, ending in softmax cross-entropy.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// Output shape after every layer, or the first shape error.
    pub fn shapes(&self) -> Result<Vec<(usize, usize, usize)>> {
        let (c, h, w) = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!("empty input shape {:?}", self.input)));
        }
        let mut shape = self.input;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer
                .output_shape(shape)
                .map_err(|e| Error::Config(format!("layer {i} ({layer}): {e}")))?;
            out.push(shape);
        }
        Ok(out)
    }

    /// Checks that shapes flow and the chain ends `fc -> softmax-xent`.
    /// Returns the class count.
    pub fn validate(&self) -> Result<usize> {
        let shapes = self.shapes()?;
        match self.layers.as_slice() {
            [.., LayerSpec::Fc { out_features }, LayerSpec::SoftmaxXent] => {
                if self.layers[..self.layers.len() - 1].contains(&LayerSpec::SoftmaxXent) {
                    return Err(Error::Config("softmax-xent may only appear last".into()));
                }
                debug_assert_eq!(shapes.last().map(|s| s.0), Some(*out_features));
                Ok(*out_features)
            }
            _ => Err(Error::Config(
                "model must end with an fc layer followed by softmax-xent".into(),
            )),
        }
    }

    pub fn num_classes(&self) -> Result<usize> {
        self.validate()
    }
}

/// Per-layer initialization seed derived from the model seed.
fn layer_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Clone, Debug)]
pub struct Network {
    spec: ModelSpec,
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(spec: &ModelSpec, ssim: SsimConstants, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut shape = spec.input;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, ls) in spec.layers.iter().enumerate() {
            let s = layer_seed(seed, i);
            let layer = match *ls {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => Some(Layer::Conv(Conv2d::new(
                    shape,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    s,
                )?)),
                LayerSpec::Ssim {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => Some(Layer::Ssim(SsimLayer::new(
                    shape,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    ssim,
                    s,
                )?)),
                LayerSpec::Relu => Some(Layer::Relu(Relu::new())),
                LayerSpec::MaxPool { kernel, stride } => {
                    Some(Layer::MaxPool(MaxPool::new(kernel, stride)))
                }
                LayerSpec::Fc { out_features } => Some(Layer::Fc(Linear::new(
                    shape.0 * shape.1 * shape.2,
                    out_features,
                    s,
                )?)),
                LayerSpec::SoftmaxXent => None,
            };
            layers.extend(layer);
            shape = ls.output_shape(shape)?;
        }
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    /// Builds a network from explicit layers (used for hand-set toy models).
    pub fn from_layers(spec: ModelSpec, layers: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Logits `(N, classes)`. With `train`, every layer caches for backward.
    pub fn forward(&mut self, input: &Tensor, train: bool) -> Result<Tensor> {
        let (c, h, w) = self.spec.input;
        if input.shape().len() != 4 || input.shape()[1..] != [c, h, w] {
            return Err(Error::Shape(format!(
                "model expects (N, {c}, {h}, {w}) input, got {:?}",
                input.shape()
            )));
        }
        let mut x = input.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            x = layer.forward(&x, train)?;
            x.check_finite(&format!("layer {i} ({}) forward", layer.kind()))?;
        }
        Ok(x)
    }

    /// Back-propagates `dL/dlogits`, accumulating parameter gradients, and
    /// returns `dL/dinput`.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<Tensor> {
        let mut g = grad_logits.clone();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            g = layer.backward(&g)?;
            g.check_finite(&format!("layer {i} ({}) backward", layer.kind()))?;
        }
        Ok(g)
    }

    /// Named parameters in a stable order: `layer{i}.weight`, `layer{i}.bias`.
    pub fn params(&self) -> Vec<(String, &Param)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.params()
                    .into_iter()
                    .map(move |(n, p)| (format!("layer{i}.{n}"), p))
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| {
                l.params_mut()
                    .into_iter()
                    .map(move |(n, p)| (format!("layer{i}.{n}"), p))
            })
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.value.len()).sum()
    }
}
