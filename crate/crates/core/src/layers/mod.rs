//! Layers with explicit forward and backward passes.
//!
//! Every layer works on whole batches. Forward calls made with `train = true`
//! cache what the paired backward needs; a backward consumes that cache, so
//! calling it twice (or without a forward) is a state error.

mod activation;
mod conv;
mod linear;
mod loss;
mod pool;

use std::fmt;
use std::str::FromStr;

pub use activation::Relu;
pub use conv::Conv2d;
pub use linear::Linear;
pub use loss::{per_sample_xent, softmax_xent};
pub use pool::MaxPool;

use crate::error::{Error, Result};
use crate::ssim::SsimLayer;
use crate::tensor::Tensor;

/// One entry of an architecture description.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
    },
    Ssim {
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        kernel: (usize, usize),
        stride: usize,
    },
    Fc {
        out_features: usize,
    },
    SoftmaxXent,
}

impl LayerSpec {
    pub fn conv(out_channels: usize, k: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::Conv {
            out_channels,
            kernel: (k, k),
            stride,
            padding,
        }
    }

    pub fn ssim(out_channels: usize, k: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::Ssim {
            out_channels,
            kernel: (k, k),
            stride,
            padding,
        }
    }

    pub fn maxpool(k: usize) -> Self {
        LayerSpec::MaxPool {
            kernel: (k, k),
            stride: k,
        }
    }

    pub fn fc(out_features: usize) -> Self {
        LayerSpec::Fc { out_features }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Ssim { .. } => "ssim",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::Fc { .. } => "fc",
            LayerSpec::SoftmaxXent => "softmax-xent",
        }
    }

    /// Output `(C, H, W)` for an input of the given shape. Fully-connected
    /// layers report `(out, 1, 1)`.
    pub fn output_shape(&self, input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        let (c, h, w) = input;
        match *self {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                padding,
            }
            | LayerSpec::Ssim {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let win = Window::new(c, h, w, kernel, stride, padding)?;
                Ok((out_channels, win.out_h, win.out_w))
            }
            LayerSpec::MaxPool { kernel, stride } => {
                let (oh, ow) = pool::pooled_dims(h, w, kernel, stride)?;
                Ok((c, oh, ow))
            }
            LayerSpec::Relu | LayerSpec::SoftmaxXent => Ok(input),
            LayerSpec::Fc { out_features } => Ok((out_features, 1, 1)),
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                padding,
            }
            | LayerSpec::Ssim {
                out_channels,
                kernel,
                stride,
                padding,
            } => write!(
                f,
                "{} out={} kernel={}x{} stride={} padding={}",
                self.kind(),
                out_channels,
                kernel.0,
                kernel.1,
                stride,
                padding
            ),
            LayerSpec::MaxPool { kernel, stride } => {
                write!(f, "maxpool kernel={}x{} stride={}", kernel.0, kernel.1, stride)
            }
            LayerSpec::Fc { out_features } => write!(f, "fc out={out_features}"),
            LayerSpec::Relu | LayerSpec::SoftmaxXent => f.write_str(self.kind()),
        }
    }
}

fn parse_pair(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("expected HxW, got {s:?}"));
    let (a, b) = s.split_once('x').ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

impl FromStr for LayerSpec {
    type Err = Error;

    /// Parses the `kind key=value ...` notation produced by `Display`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split_whitespace();
        let kind = parts
            .next()
            .ok_or_else(|| Error::Config("empty layer description".into()))?;
        let mut out = None;
        let mut kernel = None;
        let mut stride = None;
        let mut padding = None;
        for part in parts {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {part:?}")))?;
            let num = || -> Result<usize> {
                value
                    .parse()
                    .map_err(|_| Error::Config(format!("bad integer for {key}: {value:?}")))
            };
            match key {
                "out" => out = Some(num()?),
                "kernel" => kernel = Some(parse_pair(value)?),
                "stride" => stride = Some(num()?),
                "padding" => padding = Some(num()?),
                _ => return Err(Error::Config(format!("unknown layer attribute {key:?}"))),
            }
        }
        let need = |v: Option<usize>, name: &str| {
            v.ok_or_else(|| Error::Config(format!("{kind} layer needs {name}=")))
        };
        let spec = match kind {
            "conv" | "ssim" => {
                let out_channels = need(out, "out")?;
                let kernel = kernel.ok_or_else(|| Error::Config(format!("{kind} layer needs kernel=")))?;
                let stride = stride.unwrap_or(1);
                let padding = padding.unwrap_or(0);
                if kind == "conv" {
                    LayerSpec::Conv {
                        out_channels,
                        kernel,
                        stride,
                        padding,
                    }
                } else {
                    LayerSpec::Ssim {
                        out_channels,
                        kernel,
                        stride,
                        padding,
                    }
                }
            }
            "maxpool" => {
                if out.is_some() || padding.is_some() {
                    return Err(Error::Config("maxpool takes only kernel= and stride=".into()));
                }
                let kernel = kernel.unwrap_or((2, 2));
                LayerSpec::MaxPool {
                    kernel,
                    stride: stride.unwrap_or(kernel.0),
                }
            }
            "fc" => {
                if kernel.is_some() || stride.is_some() || padding.is_some() {
                    return Err(Error::Config("fc takes only out=".into()));
                }
                LayerSpec::Fc {
                    out_features: need(out, "out")?,
                }
            }
            "relu" | "softmax-xent" => {
                if out.is_some() || kernel.is_some() || stride.is_some() || padding.is_some() {
                    return Err(Error::Config(format!("{kind} takes no attributes")));
                }
                if kind == "relu" {
                    LayerSpec::Relu
                } else {
                    LayerSpec::SoftmaxXent
                }
            }
            other => return Err(Error::Config(format!("unknown layer kind {other:?}"))),
        };
        match spec {
            LayerSpec::Conv { out_channels: 0, .. }
            | LayerSpec::Ssim { out_channels: 0, .. }
            | LayerSpec::Fc { out_features: 0 } => {
                Err(Error::Config(format!("{kind} needs a positive output count")))
            }
            LayerSpec::Conv { stride: 0, .. }
            | LayerSpec::Ssim { stride: 0, .. }
            | LayerSpec::MaxPool { stride: 0, .. } => {
                Err(Error::Config(format!("{kind} needs a positive stride")))
            }
            _ => Ok(spec),
        }
    }
}

/// A trainable tensor and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    /// Whether weight decay applies (true for weights, false for biases).
    pub decay: bool,
}

impl Param {
    pub fn new(value: Tensor, decay: bool) -> Self {
        let grad = Tensor::zeros(value.shape()).expect("value shape is valid");
        Self { value, grad, decay }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }
}

/// Sliding-window geometry shared by convolution and SSIM layers.
///
/// Patches are laid out as a `(C*kh*kw) x (out_h*out_w)` column matrix,
/// channel-major within each column.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn new(
        c: usize,
        h: usize,
        w: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let (kh, kw) = kernel;
        if kh == 0 || kw == 0 || stride == 0 {
            return Err(Error::Config("kernel and stride must be positive".into()));
        }
        let (ph, pw) = (h + 2 * padding, w + 2 * padding);
        if kh > ph || kw > pw {
            return Err(Error::Config(format!(
                "{kh}x{kw} kernel does not fit a {h}x{w} input with padding {padding}"
            )));
        }
        if (ph - kh) % stride != 0 || (pw - kw) % stride != 0 {
            return Err(Error::Config(format!(
                "non-integral output size: ({h}+2*{padding}-{kh})/{stride} for a {h}x{w} input"
            )));
        }
        Ok(Self {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            padding,
            out_h: (ph - kh) / stride + 1,
            out_w: (pw - kw) / stride + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn input_len(&self) -> usize {
        self.c * self.h * self.w
    }

    /// Walks every (patch row, output position, input index) triple whose
    /// input index lies inside the image.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let p = self.positions();
        for ch in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ch * self.kh + ki) * self.kw + kj;
                    for oi in 0..self.out_h {
                        let r = (oi * self.stride + ki) as isize - self.padding as isize;
                        if r < 0 || r as usize >= self.h {
                            continue;
                        }
                        let base = (ch * self.h + r as usize) * self.w;
                        for oj in 0..self.out_w {
                            let col = (oj * self.stride + kj) as isize - self.padding as isize;
                            if col < 0 || col as usize >= self.w {
                                continue;
                            }
                            f(row * p + oi * self.out_w + oj, row, base + col as usize);
                        }
                    }
                }
            }
        }
    }

    /// Unfolds one `(C, H, W)` image into the column matrix; padding reads 0.
    pub fn im2col(&self, image: &[f64]) -> Vec<f64> {
        debug_assert_eq!(image.len(), self.input_len());
        let mut cols = vec![0.0; self.patch_len() * self.positions()];
        self.for_each_tap(|dst, _, src| cols[dst] = image[src]);
        cols
    }

    /// Adjoint of [`Window::im2col`]: scatter-adds columns back onto the image.
    pub fn col2im(&self, cols: &[f64], image: &mut [f64]) {
        debug_assert_eq!(image.len(), self.input_len());
        self.for_each_tap(|src, _, dst| image[dst] += cols[src]);
    }
}

/// A network layer. Loss layers are not included; see [`softmax_xent`].
#[derive(Clone, Debug)]
pub enum Layer {
    Conv(Conv2d),
    Ssim(SsimLayer),
    Relu(Relu),
    MaxPool(MaxPool),
    Fc(Linear),
}

impl Layer {
    pub fn forward(&mut self, input: &Tensor, train: bool) -> Result<Tensor> {
        match self {
            Layer::Conv(l) => l.forward(input, train),
            Layer::Ssim(l) => l.forward(input, train),
            Layer::Relu(l) => l.forward(input, train),
            Layer::MaxPool(l) => l.forward(input, train),
            Layer::Fc(l) => l.forward(input, train),
        }
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv(l) => l.backward(grad_out),
            Layer::Ssim(l) => l.backward(grad_out),
            Layer::Relu(l) => l.backward(grad_out),
            Layer::MaxPool(l) => l.backward(grad_out),
            Layer::Fc(l) => l.backward(grad_out),
        }
    }

    /// Trainable parameters as `(suffix, param)` pairs, weights first.
    pub fn params(&self) -> Vec<(&'static str, &Param)> {
        match self {
            Layer::Conv(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            Layer::Ssim(l) => vec![("weight", &l.filters)],
            Layer::Fc(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            Layer::Relu(_) | Layer::MaxPool(_) => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        match self {
            Layer::Conv(l) => vec![("weight", &mut l.weight), ("bias", &mut l.bias)],
            Layer::Ssim(l) => vec![("weight", &mut l.filters)],
            Layer::Fc(l) => vec![("weight", &mut l.weight), ("bias", &mut l.bias)],
            Layer::Relu(_) | Layer::MaxPool(_) => Vec::new(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::Ssim(_) => "ssim",
            Layer::Relu(_) => "relu",
            Layer::MaxPool(_) => "maxpool",
            Layer::Fc(_) => "fc",
        }
    }
}

/// Sums per-sample partial gradients in sample order so the result does not
/// depend on how the samples were scheduled.
pub(crate) fn accumulate_in_order(target: &mut [f64], partials: &[Vec<f64>]) {
    for part in partials {
        for (t, p) in target.iter_mut().zip(part) {
            *t += p;
        }
    }
}
