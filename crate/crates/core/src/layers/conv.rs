use rayon::prelude::*;

use super::{accumulate_in_order, Param, Window};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Shape4, Tensor};

/// 2-D convolution (cross-correlation) with zero padding.
#[derive(Clone, Debug)]
pub struct Conv2d {
    /// `(F, C, kh, kw)`
    pub weight: Param,
    /// `(F)`
    pub bias: Param,
    window: Window,
    cache: Option<ConvCache>,
}

#[derive(Clone, Debug)]
struct ConvCache {
    n: usize,
    cols: Vec<Vec<f64>>,
}

impl Conv2d {
    /// Weights drawn from N(0, 2 / fan_in), biases zero.
    pub fn new(
        input: (usize, usize, usize),
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
        seed: u64,
    ) -> Result<Self> {
        let (c, h, w) = input;
        let window = Window::new(c, h, w, kernel, stride, padding)?;
        let fan_in = window.patch_len() as f64;
        let weight = Tensor::randn(&[out_channels, c, kernel.0, kernel.1], seed)?
            .scale((2.0 / fan_in).sqrt());
        Self::from_weights(window, weight, Tensor::zeros(&[out_channels])?)
    }

    pub fn from_weights(window: Window, weight: Tensor, bias: Tensor) -> Result<Self> {
        let f = weight.shape()[0];
        if weight.shape() != [f, window.c, window.kh, window.kw] || bias.shape() != [f] {
            return Err(Error::Shape(format!(
                "conv weights {:?} / bias {:?} do not match the {}x{}x{} window",
                weight.shape(),
                bias.shape(),
                window.c,
                window.kh,
                window.kw
            )));
        }
        Ok(Self {
            weight: Param::new(weight, true),
            bias: Param::new(bias, false),
            window,
            cache: None,
        })
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn out_channels(&self) -> usize {
        self.bias.value.len()
    }

    fn check_input(&self, input: &Tensor) -> Result<Shape4> {
        let s = Shape4::of(input)?;
        let win = &self.window;
        if (s.c, s.h, s.w) != (win.c, win.h, win.w) {
            return Err(Error::Shape(format!(
                "conv expects ({}, {}, {}) per sample, got {:?}",
                win.c,
                win.h,
                win.w,
                input.shape()
            )));
        }
        Ok(s)
    }

    pub fn forward(&mut self, input: &Tensor, train: bool) -> Result<Tensor> {
        let s = self.check_input(input)?;
        let win = self.window;
        let (f, np, p) = (self.out_channels(), win.patch_len(), win.positions());
        let weight = self.weight.value.data();
        let bias = self.bias.value.data();

        let per_sample: Vec<(Vec<f64>, Vec<f64>)> = (0..s.n)
            .into_par_iter()
            .map(|i| {
                let cols = win.im2col(input.outer(i));
                let mut out = vec![0.0; f * p];
                for (row, b) in out.chunks_mut(p).zip(bias) {
                    row.fill(*b);
                }
                gemm(f, np, p, 1.0, weight, false, &cols, false, 1.0, &mut out);
                (out, cols)
            })
            .collect();

        let mut data = Vec::with_capacity(s.n * f * p);
        let mut cache = Vec::with_capacity(if train { s.n } else { 0 });
        for (out, cols) in per_sample {
            data.extend_from_slice(&out);
            if train {
                cache.push(cols);
            }
        }
        self.cache = train.then_some(ConvCache { n: s.n, cols: cache });
        Tensor::new(&[s.n, f, win.out_h, win.out_w], data)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("conv backward called without a cached forward".into()))?;
        let win = self.window;
        let (f, np, p) = (self.out_channels(), win.patch_len(), win.positions());
        if grad_out.shape() != [cache.n, f, win.out_h, win.out_w] {
            return Err(Error::Shape(format!(
                "conv grad_out {:?} does not match forward output",
                grad_out.shape()
            )));
        }
        let weight = self.weight.value.data();

        let per_sample: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = cache
            .cols
            .par_iter()
            .enumerate()
            .map(|(i, cols)| {
                let g = grad_out.outer(i);
                let mut gw = vec![0.0; f * np];
                gemm(f, p, np, 1.0, g, false, cols, true, 0.0, &mut gw);
                let gb: Vec<f64> = g.chunks(p).map(|row| row.iter().sum()).collect();
                let mut gcols = vec![0.0; np * p];
                gemm(np, f, p, 1.0, weight, true, g, false, 0.0, &mut gcols);
                let mut gx = vec![0.0; win.input_len()];
                win.col2im(&gcols, &mut gx);
                (gw, gb, gx)
            })
            .collect();

        let mut grad_input = Vec::with_capacity(cache.n * win.input_len());
        let mut gws = Vec::with_capacity(cache.n);
        let mut gbs = Vec::with_capacity(cache.n);
        for (gw, gb, gx) in per_sample {
            grad_input.extend_from_slice(&gx);
            gws.push(gw);
            gbs.push(gb);
        }
        accumulate_in_order(self.weight.grad.data_mut(), &gws);
        accumulate_in_order(self.bias.grad.data_mut(), &gbs);
        Tensor::new(&[cache.n, win.c, win.h, win.w], grad_input)
    }
}
