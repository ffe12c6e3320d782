//! Dense row-major tensors of `f64`.
//!
//! Every activation, weight and gradient in the crate is a [`Tensor`]. The
//! type is deliberately small: construction, a handful of elementwise ops,
//! and patch extraction. Images are stored channel-major `(C, H, W)` and
//! batches as `(N, C, H, W)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Batch geometry of an image tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "all of (n, c, h, w) must be positive, got ({n}, {c}, {h}, {w})"
            )));
        }
        Ok(Self { n, c, h, w })
    }

    pub fn of(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [n, c, h, w] => Self::new(n, c, h, w),
            _ => Err(Error::Shape(format!(
                "expected a rank-4 (N, C, H, W) tensor, got shape {:?}",
                t.shape()
            ))),
        }
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    ScalarMul,
}

#[derive(Clone, Copy, Debug)]
pub enum Operand<'a> {
    Tensor(&'a Tensor),
    Scalar(f64),
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::Shape("shape must have at least one dimension".into()));
    }
    if shape.contains(&0) {
        return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len = check_shape(shape)?;
        if data.len() != len {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        })
    }

    pub fn filled(shape: &[usize], value: f64) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        })
    }

    /// I.i.d. standard normal samples from a ChaCha8 stream seeded with `seed`.
    pub fn randn(shape: &[usize], seed: u64) -> Result<Self> {
        let len = check_shape(shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..len)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "operand shapes differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&a| a * s).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&a| f(a)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Fails with a numeric fault naming `location` if any element is NaN or infinite.
    pub fn check_finite(&self, location: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Numeric {
                location: location.to_string(),
                msg: format!("non-finite value {} at flat index {i}", self.data[i]),
            }),
        }
    }

    /// Row `index` of the leading axis as a slice.
    pub fn outer(&self, index: usize) -> &[f64] {
        let stride = self.data.len() / self.shape[0];
        &self.data[index * stride..(index + 1) * stride]
    }

    /// Flattened `(C, kh, kw)` window of a `(C, H, W)` tensor.
    ///
    /// The window's top-left corner sits at `center - (k - 1) / 2` along each
    /// axis. Positions falling into the zero-padding border read as 0.
    pub fn extract_patch(
        &self,
        center: (usize, usize),
        kernel: (usize, usize),
        padding: usize,
    ) -> Result<Tensor> {
        let (c, h, w) = match *self.shape() {
            [c, h, w] => (c, h, w),
            _ => {
                return Err(Error::Shape(format!(
                    "extract_patch expects a (C, H, W) tensor, got {:?}",
                    self.shape
                )))
            }
        };
        let (kh, kw) = kernel;
        if kh == 0 || kw == 0 {
            return Err(Error::Shape("kernel dimensions must be positive".into()));
        }
        // Window origin in padded coordinates.
        let top = (center.0 + padding) as isize - ((kh - 1) / 2) as isize;
        let left = (center.1 + padding) as isize - ((kw - 1) / 2) as isize;
        if top < 0
            || left < 0
            || top as usize + kh > h + 2 * padding
            || left as usize + kw > w + 2 * padding
        {
            return Err(Error::Bounds(format!(
                "{kh}x{kw} window at center {center:?} leaves the {h}x{w} input padded by {padding}"
            )));
        }
        let mut out = Vec::with_capacity(c * kh * kw);
        for ch in 0..c {
            for i in 0..kh {
                for j in 0..kw {
                    let r = top + i as isize - padding as isize;
                    let col = left + j as isize - padding as isize;
                    let v = if r < 0 || col < 0 || r as usize >= h || col as usize >= w {
                        0.0
                    } else {
                        self.data[(ch * h + r as usize) * w + col as usize]
                    };
                    out.push(v);
                }
            }
        }
        Tensor::new(&[c * kh * kw], out)
    }
}

pub fn elementwise(op: ElementwiseOp, a: &Tensor, b: Operand<'_>) -> Result<Tensor> {
    match (op, b) {
        (ElementwiseOp::Add, Operand::Tensor(b)) => a.add(b),
        (ElementwiseOp::Sub, Operand::Tensor(b)) => a.sub(b),
        (ElementwiseOp::Mul, Operand::Tensor(b)) => a.mul(b),
        (ElementwiseOp::ScalarMul, Operand::Scalar(s)) => Ok(a.scale(s)),
        (ElementwiseOp::Add, Operand::Scalar(s)) => Ok(a.map(|v| v + s)),
        (ElementwiseOp::Sub, Operand::Scalar(s)) => Ok(a.map(|v| v - s)),
        (ElementwiseOp::Mul, Operand::Scalar(s)) => Ok(a.scale(s)),
        (ElementwiseOp::ScalarMul, Operand::Tensor(_)) => Err(Error::Usage(
            "scalar-mul takes a scalar operand".into(),
        )),
    }
}

/// Row-major `C = alpha * op(A) * op(B) + beta * C` where `op` optionally
/// transposes. `a` is `m x k` after `op`, `b` is `k x n` after `op`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths are checked above against the dimensions, and the
    // strides describe exactly those row-major (or transposed) layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_has_requested_shape() {
        let t = Tensor::zeros(&[2, 2]).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
        assert_eq!(Tensor::zeros(&[1]).unwrap().data(), &[0.0]);
        assert_eq!(Tensor::zeros(&[3, 1, 2]).unwrap().len(), 6);
    }

    #[test]
    fn invalid_shapes_rejected() {
        assert!(matches!(Tensor::zeros(&[]), Err(Error::Shape(_))));
        assert!(matches!(Tensor::zeros(&[2, 0]), Err(Error::Shape(_))));
        assert!(matches!(Tensor::randn(&[0], 1), Err(Error::Shape(_))));
        assert!(matches!(
            Tensor::new(&[2, 2], vec![1.0; 3]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn randn_is_deterministic() {
        let a = Tensor::randn(&[4], 7).unwrap();
        let b = Tensor::randn(&[4], 7).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(a, Tensor::randn(&[4], 8).unwrap());
    }

    #[test]
    fn randn_moments() {
        let t = Tensor::randn(&[100_000], 1).unwrap();
        let n = t.len() as f64;
        let mean = t.sum() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn elementwise_ops() {
        let a = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(&[2], vec![3.0, 4.0]).unwrap();
        let sum = elementwise(ElementwiseOp::Add, &a, Operand::Tensor(&b)).unwrap();
        assert_eq!(sum.data(), &[4.0, 6.0]);
        let c = Tensor::new(&[2], vec![1.0, -1.0]).unwrap();
        let scaled = elementwise(ElementwiseOp::ScalarMul, &c, Operand::Scalar(2.0)).unwrap();
        assert_eq!(scaled.data(), &[2.0, -2.0]);
        let x = Tensor::randn(&[3, 4], 3).unwrap();
        assert_eq!(x.sub(&x).unwrap(), Tensor::zeros(&[3, 4]).unwrap());
        let d = Tensor::zeros(&[3]).unwrap();
        assert!(matches!(a.add(&d), Err(Error::Shape(_))));
    }

    #[test]
    fn patch_of_constant_image() {
        let img = Tensor::filled(&[1, 3, 3], 5.0).unwrap();
        let p = img.extract_patch((1, 1), (3, 3), 0).unwrap();
        assert_eq!(p.data(), &[5.0; 9]);

        let corner = img.extract_patch((0, 0), (3, 3), 1).unwrap();
        #[rustfmt::skip]
        let expected = [
            0.0, 0.0, 0.0,
            0.0, 5.0, 5.0,
            0.0, 5.0, 5.0,
        ];
        assert_eq!(corner.data(), &expected);
        assert_eq!(corner.data().iter().filter(|&&v| v == 0.0).count(), 5);
    }

    #[test]
    fn patch_spans_channels() {
        let img = Tensor::randn(&[2, 4, 4], 11).unwrap();
        assert_eq!(img.extract_patch((1, 1), (3, 3), 0).unwrap().len(), 18);
    }

    #[test]
    fn patch_out_of_bounds() {
        let img = Tensor::zeros(&[1, 3, 3]).unwrap();
        assert!(matches!(
            img.extract_patch((0, 0), (3, 3), 0),
            Err(Error::Bounds(_))
        ));
        assert!(matches!(
            img.extract_patch((2, 2), (5, 5), 1),
            Err(Error::Bounds(_))
        ));
    }

    #[test]
    fn gemm_matches_naive() {
        let a = Tensor::randn(&[3, 4], 1).unwrap();
        let b = Tensor::randn(&[4, 5], 2).unwrap();
        let mut c = vec![0.0; 15];
        gemm(3, 4, 5, 1.0, a.data(), false, b.data(), false, 0.0, &mut c);
        for i in 0..3 {
            for j in 0..5 {
                let want: f64 = (0..4).map(|p| a.data()[i * 4 + p] * b.data()[p * 5 + j]).sum();
                assert!((c[i * 5 + j] - want).abs() < 1e-12);
            }
        }
        // Aᵀ stored as 4x3, Bᵀ stored as 5x4.
        let at: Vec<f64> = (0..4).flat_map(|p| (0..3).map(move |i| (p, i))).map(|(p, i)| a.data()[i * 4 + p]).collect();
        let bt: Vec<f64> = (0..5).flat_map(|j| (0..4).map(move |p| (j, p))).map(|(j, p)| b.data()[p * 5 + j]).collect();
        let mut c2 = vec![0.0; 15];
        gemm(3, 4, 5, 1.0, &at, true, &bt, true, 0.0, &mut c2);
        for (x, y) in c.iter().zip(&c2) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn check_finite_reports_location() {
        let t = Tensor::new(&[2], vec![1.0, f64::NAN]).unwrap();
        match t.check_finite("conv1") {
            Err(Error::Numeric { location, .. }) => assert_eq!(location, "conv1"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
