//! Structural-similarity layer.
//!
//! Each output activation is the simplified SSIM index between a trainable
//! filter `y` and the local input patch `x` under it:
//!
//! ```text
//!            (2 mu_x mu_y + C1) (2 cov_xy + C2)
//! SSIM = -----------------------------------------
//!        (mu_x^2 + mu_y^2 + C1) (var_x + var_y + C2)
//! ```
//!
//! A patch spans every input channel of the window, so `n_p = C * kh * kw`.
//! Statistics inside the layer use the biased (1/n_p) estimators; under that
//! convention the closed-form derivative in [`ssim_closed_form_grad`] is the
//! exact gradient of the forward pass. The unbiased (1/(n_p - 1)) estimators
//! are still available through [`patch_stats`] for inspection.
//!
//! Writing `A1 = 2 mu_x mu_y + C1`, `A2 = 2 cov + C2`, `B1 = mu_x^2 + mu_y^2 + C1`
//! and `B2 = var_x + var_y + C2`, the derivative with respect to the filter is
//!
//! ```text
//! dSSIM/dy = 2 [A1 B1 (B2 x - A2 y) + B1 B2 (A2 - A1) mu_x 1 + A1 A2 (B1 - B2) mu_y 1]
//!            / (n_p B1^2 B2^2)
//! ```
//!
//! and, since the index is symmetric in `x` and `y`, the input derivative is
//! the same expression with the roles swapped.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::layers::{accumulate_in_order, Param, Window};
use crate::tensor::{gemm, Shape4, Tensor};

/// Stability constants and component exponents.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl SsimConstants {
    /// `C1 = (0.01 L)^2`, `C2 = (0.03 L)^2`, `C3 = C2 / 2`, unit exponents.
    pub fn for_dynamic_range(range: f64) -> Self {
        let c1 = (0.01 * range).powi(2);
        let c2 = (0.03 * range).powi(2);
        Self {
            c1,
            c2,
            c3: c2 / 2.0,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }

    /// Unit exponents and `C3 = C2 / 2`.
    pub fn new(c1: f64, c2: f64) -> Result<Self> {
        let k = Self {
            c1,
            c2,
            c3: c2 / 2.0,
            ..Self::default()
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.c1, self.c2, self.c3, self.alpha, self.beta, self.gamma];
        if all.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Config(format!(
                "SSIM constants and exponents must be positive and finite: {self:?}"
            )));
        }
        Ok(())
    }
}

impl Default for SsimConstants {
    fn default() -> Self {
        Self::for_dynamic_range(1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarianceMode {
    /// Denominator `n - 1`.
    Unbiased,
    /// Denominator `n`; the mode the layer trains with.
    Biased,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchStatistics {
    pub mu_x: f64,
    pub mu_y: f64,
    pub var_x: f64,
    pub var_y: f64,
    pub cov_xy: f64,
    pub n_p: usize,
}

pub fn patch_stats(x: &[f64], y: &[f64], mode: VarianceMode) -> Result<PatchStatistics> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "patch lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::Config(format!(
            "patch statistics need at least 2 elements, got {n}"
        )));
    }
    let nf = n as f64;
    let mu_x = x.iter().sum::<f64>() / nf;
    let mu_y = y.iter().sum::<f64>() / nf;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mu_x, b - mu_y);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let denom = match mode {
        VarianceMode::Unbiased => nf - 1.0,
        VarianceMode::Biased => nf,
    };
    Ok(PatchStatistics {
        mu_x,
        mu_y,
        var_x: sxx / denom,
        var_y: syy / denom,
        cov_xy: sxy / denom,
        n_p: n,
    })
}

/// How the structure term is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StructureTerm {
    /// `(2 cov + C3) / (sd_x sd_y + C3)`; exceeds 1 at `x == y`.
    LeadingTwo,
    /// `(cov + C3) / (sd_x sd_y + C3)`; with `C3 = C2 / 2` the product
    /// `l * c * s` reduces to [`ssim_simplified`].
    Standard,
}

/// Luminance, contrast and structure comparisons `(l, c, s)`.
pub fn ssim_components(
    stats: &PatchStatistics,
    k: &SsimConstants,
    structure: StructureTerm,
) -> (f64, f64, f64) {
    let (sd_x, sd_y) = (stats.var_x.max(0.0).sqrt(), stats.var_y.max(0.0).sqrt());
    let l = (2.0 * stats.mu_x * stats.mu_y + k.c1)
        / (stats.mu_x * stats.mu_x + stats.mu_y * stats.mu_y + k.c1);
    let c = (2.0 * sd_x * sd_y + k.c2) / (stats.var_x + stats.var_y + k.c2);
    let lead = match structure {
        StructureTerm::LeadingTwo => 2.0,
        StructureTerm::Standard => 1.0,
    };
    let s = (lead * stats.cov_xy + k.c3) / (sd_x * sd_y + k.c3);
    (l, c, s)
}

/// `l^alpha * c^beta * s^gamma`. Inspection only: non-integer exponents of a
/// negative structure term yield NaN, and the layer never trains through it.
pub fn ssim_general(stats: &PatchStatistics, k: &SsimConstants, structure: StructureTerm) -> f64 {
    let (l, c, s) = ssim_components(stats, k, structure);
    l.powf(k.alpha) * c.powf(k.beta) * s.powf(k.gamma)
}

/// The simplified index used as the layer activation.
pub fn ssim_simplified(stats: &PatchStatistics, k: &SsimConstants) -> f64 {
    let t = SsimGradTerms::new(stats, k);
    (t.a1 * t.a2) / (t.b1 * t.b2)
}

/// Numerator and denominator factors of the simplified index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimGradTerms {
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
}

impl SsimGradTerms {
    pub fn new(stats: &PatchStatistics, k: &SsimConstants) -> Self {
        Self {
            a1: 2.0 * stats.mu_x * stats.mu_y + k.c1,
            a2: 2.0 * stats.cov_xy + k.c2,
            b1: stats.mu_x * stats.mu_x + stats.mu_y * stats.mu_y + k.c1,
            b2: stats.var_x + stats.var_y + k.c2,
        }
    }
}

/// `dSSIM/dy` for one patch/filter pair. `stats` must be biased-mode
/// statistics of `(x, y)`.
pub fn ssim_closed_form_grad(
    x: &[f64],
    y: &[f64],
    stats: &PatchStatistics,
    k: &SsimConstants,
) -> Result<Tensor> {
    if x.len() != y.len() || x.len() != stats.n_p {
        return Err(Error::Shape(format!(
            "gradient needs equal-length patch/filter of n_p = {}, got {} and {}",
            stats.n_p,
            x.len(),
            y.len()
        )));
    }
    let SsimGradTerms { a1, a2, b1, b2 } = SsimGradTerms::new(stats, k);
    let denom = stats.n_p as f64 * b1 * b1 * b2 * b2;
    let shift = b1 * b2 * (a2 - a1) * stats.mu_x + a1 * a2 * (b1 - b2) * stats.mu_y;
    let data = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| 2.0 * (a1 * b1 * (b2 * xi - a2 * yi) + shift) / denom)
        .collect();
    Tensor::new(&[x.len()], data)
}

/// Sliding-window SSIM layer. Filters are stored flattened, one row of
/// `C * kh * kw` per output channel. The layer has no bias.
#[derive(Clone, Debug)]
pub struct SsimLayer {
    /// `(F, C * kh * kw)`
    pub filters: Param,
    window: Window,
    constants: SsimConstants,
    cache: Option<SsimCache>,
}

#[derive(Clone, Debug)]
struct SsimCache {
    n: usize,
    samples: Vec<SampleCache>,
}

#[derive(Clone, Debug)]
struct SampleCache {
    cols: Vec<f64>,
    mu_x: Vec<f64>,
    var_x: Vec<f64>,
    cov: Vec<f64>,
}

/// Per-filter biased mean and variance.
fn filter_moments(filters: &[f64], np: usize) -> (Vec<f64>, Vec<f64>) {
    filters
        .chunks(np)
        .map(|y| {
            let mu = y.iter().sum::<f64>() / np as f64;
            let var = y.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / np as f64;
            (mu, var)
        })
        .unzip()
}

impl SsimLayer {
    /// Filters drawn from N(0, 1).
    pub fn new(
        input: (usize, usize, usize),
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
        constants: SsimConstants,
        seed: u64,
    ) -> Result<Self> {
        let (c, h, w) = input;
        let window = Window::new(c, h, w, kernel, stride, padding)?;
        let filters = Tensor::randn(&[out_channels, window.patch_len()], seed)?;
        Self::from_filters(window, filters, constants)
    }

    pub fn from_filters(window: Window, filters: Tensor, constants: SsimConstants) -> Result<Self> {
        constants.validate()?;
        if window.patch_len() < 2 {
            return Err(Error::Config(
                "SSIM windows need at least 2 elements per patch".into(),
            ));
        }
        if filters.shape().len() != 2 || filters.shape()[1] != window.patch_len() {
            return Err(Error::Shape(format!(
                "SSIM filters {:?} do not match patch length {}",
                filters.shape(),
                window.patch_len()
            )));
        }
        Ok(Self {
            filters: Param::new(filters, true),
            window,
            constants,
            cache: None,
        })
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn constants(&self) -> &SsimConstants {
        &self.constants
    }

    pub fn out_channels(&self) -> usize {
        self.filters.value.shape()[0]
    }

    pub fn forward(&mut self, input: &Tensor, train: bool) -> Result<Tensor> {
        let s = Shape4::of(input)?;
        let win = self.window;
        if (s.c, s.h, s.w) != (win.c, win.h, win.w) {
            return Err(Error::Shape(format!(
                "SSIM layer expects ({}, {}, {}) per sample, got {:?}",
                win.c,
                win.h,
                win.w,
                input.shape()
            )));
        }
        let (f, np, p) = (self.out_channels(), win.patch_len(), win.positions());
        let k = self.constants;
        let filters = self.filters.value.data();
        let (mu_y, var_y) = filter_moments(filters, np);
        let npf = np as f64;

        let per_sample: Vec<(Vec<f64>, SampleCache)> = (0..s.n)
            .into_par_iter()
            .map(|i| {
                let cols = win.im2col(input.outer(i));
                let mut mu_x = vec![0.0; p];
                for row in cols.chunks(p) {
                    for (m, v) in mu_x.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mu_x.iter_mut().for_each(|m| *m /= npf);
                // Centred columns give the covariance as a plain product.
                let mut centred = cols.clone();
                let mut var_x = vec![0.0; p];
                for row in centred.chunks_mut(p) {
                    for ((v, m), acc) in row.iter_mut().zip(&mu_x).zip(var_x.iter_mut()) {
                        *v -= m;
                        *acc += *v * *v;
                    }
                }
                var_x.iter_mut().for_each(|v| *v /= npf);
                let mut cov = vec![0.0; f * p];
                gemm(f, np, p, 1.0 / npf, filters, false, &centred, false, 0.0, &mut cov);

                let mut out = vec![0.0; f * p];
                for fi in 0..f {
                    let (my, vy) = (mu_y[fi], var_y[fi]);
                    let row = fi * p;
                    for j in 0..p {
                        let mx = mu_x[j];
                        let a1 = 2.0 * mx * my + k.c1;
                        let a2 = 2.0 * cov[row + j] + k.c2;
                        let b1 = mx * mx + my * my + k.c1;
                        let b2 = var_x[j] + vy + k.c2;
                        out[row + j] = (a1 * a2) / (b1 * b2);
                    }
                }
                (
                    out,
                    SampleCache {
                        cols,
                        mu_x,
                        var_x,
                        cov,
                    },
                )
            })
            .collect();

        let mut data = Vec::with_capacity(s.n * f * p);
        let mut samples = Vec::with_capacity(if train { s.n } else { 0 });
        for (out, cache) in per_sample {
            data.extend_from_slice(&out);
            if train {
                samples.push(cache);
            }
        }
        self.cache = train.then_some(SsimCache { n: s.n, samples });
        Tensor::new(&[s.n, f, win.out_h, win.out_w], data)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("SSIM backward called without a cached forward".into()))?;
        let win = self.window;
        let (f, np, p) = (self.out_channels(), win.patch_len(), win.positions());
        if grad_out.shape() != [cache.n, f, win.out_h, win.out_w] {
            return Err(Error::Shape(format!(
                "SSIM grad_out {:?} does not match forward output",
                grad_out.shape()
            )));
        }
        let k = self.constants;
        let filters = self.filters.value.data();
        let (mu_y, var_y) = filter_moments(filters, np);
        let npf = np as f64;

        let per_sample: Vec<(Vec<f64>, Vec<f64>)> = cache
            .samples
            .par_iter()
            .enumerate()
            .map(|(i, sc)| {
                let g = grad_out.outer(i);
                // dSSIM/dy_f = lin * x + own * y_f + shift_y (elementwise over the
                // patch), and dSSIM/dx = lin * y_f + own * x + shift_x.
                let mut lin = vec![0.0; f * p];
                let mut own_y = vec![0.0; f];
                let mut shift_y = vec![0.0; f];
                let mut own_x = vec![0.0; p];
                let mut shift_x = vec![0.0; p];
                for fi in 0..f {
                    let (my, vy) = (mu_y[fi], var_y[fi]);
                    let row = fi * p;
                    for j in 0..p {
                        let up = g[row + j];
                        if up == 0.0 {
                            continue;
                        }
                        let mx = sc.mu_x[j];
                        let a1 = 2.0 * mx * my + k.c1;
                        let a2 = 2.0 * sc.cov[row + j] + k.c2;
                        let b1 = mx * mx + my * my + k.c1;
                        let b2 = sc.var_x[j] + vy + k.c2;
                        let scale = 2.0 * up / (npf * b1 * b1 * b2 * b2);
                        let t_lin = scale * a1 * b1 * b2;
                        let t_own = -scale * a1 * b1 * a2;
                        let (p1, p2) = (b1 * b2 * (a2 - a1), a1 * a2 * (b1 - b2));
                        lin[row + j] = t_lin;
                        own_y[fi] += t_own;
                        own_x[j] += t_own;
                        shift_y[fi] += scale * (p1 * mx + p2 * my);
                        shift_x[j] += scale * (p1 * my + p2 * mx);
                    }
                }

                let mut gy = vec![0.0; f * np];
                gemm(f, p, np, 1.0, &lin, false, &sc.cols, true, 0.0, &mut gy);
                for fi in 0..f {
                    let y = &filters[fi * np..(fi + 1) * np];
                    for (gv, yv) in gy[fi * np..(fi + 1) * np].iter_mut().zip(y) {
                        *gv += own_y[fi] * yv + shift_y[fi];
                    }
                }

                let mut gcols = vec![0.0; np * p];
                gemm(np, f, p, 1.0, filters, true, &lin, false, 0.0, &mut gcols);
                for (grow, xrow) in gcols.chunks_mut(p).zip(sc.cols.chunks(p)) {
                    for j in 0..p {
                        grow[j] += own_x[j] * xrow[j] + shift_x[j];
                    }
                }
                let mut gx = vec![0.0; win.input_len()];
                win.col2im(&gcols, &mut gx);
                (gy, gx)
            })
            .collect();

        let mut grad_input = Vec::with_capacity(cache.n * win.input_len());
        let mut partials = Vec::with_capacity(cache.n);
        for (gy, gx) in per_sample {
            grad_input.extend_from_slice(&gx);
            partials.push(gy);
        }
        accumulate_in_order(self.filters.grad.data_mut(), &partials);
        Tensor::new(&[cache.n, win.c, win.h, win.w], grad_input)
    }
}
