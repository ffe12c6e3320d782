//! Filter visualization: binary PPM grids and per-filter L2 norms.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::Layer;
use crate::model::Network;
use crate::tensor::Tensor;

/// Value written for the 1-pixel gaps between cells and for unused cells.
const SEPARATOR: u8 = 255;

/// Filters of layer `index` as `(F, C, kh, kw)`.
pub fn layer_filters(model: &Network, index: usize) -> Result<Tensor> {
    let layer = model
        .layers()
        .get(index)
        .ok_or_else(|| Error::Usage(format!("model has no layer {index}")))?;
    match layer {
        Layer::Conv(l) => Ok(l.weight.value.clone()),
        Layer::Ssim(l) => {
            let w = l.window();
            l.filters
                .value
                .clone()
                .reshape(&[l.out_channels(), w.c, w.kh, w.kw])
        }
        other => Err(Error::Usage(format!(
            "layer {index} is {}, which has no spatial filters",
            other.kind()
        ))),
    }
}

/// An 8-bit RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rgb8 {
    pub width: usize,
    pub height: usize,
    /// Row-major `(height, width, 3)`.
    pub pixels: Vec<u8>,
}

impl Rgb8 {
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

/// Grid columns for `f` cells: the smallest `cols` with `cols * cols >= f`.
pub fn grid_columns(f: usize) -> usize {
    (1..=f.max(1)).find(|c| c * c >= f).unwrap_or(1)
}

/// Tiles `(F, C, kh, kw)` filters (C = 1 or 3) into a grid with 1-pixel
/// separators. Each filter is min-max scaled over all its channels to
/// [0, 255]; a constant filter maps to mid-gray.
pub fn filter_grid(filters: &Tensor) -> Result<Rgb8> {
    let (f, c, kh, kw) = match *filters.shape() {
        [f, c, kh, kw] if f > 0 => (f, c, kh, kw),
        _ => return Err(Error::Shape(format!("expected (F, C, kh, kw) filters, got {:?}", filters.shape()))),
    };
    if c != 1 && c != 3 {
        return Err(Error::Usage(format!(
            "filters over {c} channels cannot be drawn; only 1 or 3 are supported"
        )));
    }
    let cols = grid_columns(f);
    let rows = f.div_ceil(cols);
    let width = cols * kw + cols - 1;
    let height = rows * kh + rows - 1;
    let mut pixels = vec![SEPARATOR; width * height * 3];
    let flen = c * kh * kw;
    for (i, filter) in filters.data().chunks(flen).enumerate() {
        let lo = filter.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = filter.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scale = |v: f64| -> u8 {
            let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
            (t * 255.0).round() as u8
        };
        let (x0, y0) = ((i % cols) * (kw + 1), (i / cols) * (kh + 1));
        for y in 0..kh {
            for x in 0..kw {
                let at = ((y0 + y) * width + x0 + x) * 3;
                for ch in 0..3 {
                    let src = if c == 1 { 0 } else { ch };
                    pixels[at + ch] = scale(filter[(src * kh + y) * kw + x]);
                }
            }
        }
    }
    Ok(Rgb8 { width, height, pixels })
}

/// L2 norm of every filter.
pub fn filter_norms(filters: &Tensor) -> Result<Vec<f64>> {
    let f = *filters
        .shape()
        .first()
        .ok_or_else(|| Error::Shape("filters need a leading filter axis".into()))?;
    if f == 0 {
        return Ok(Vec::new());
    }
    Ok(filters
        .data()
        .chunks(filters.len() / f)
        .map(|w| w.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect())
}

/// Writes `filters.ppm` and `filter_norms.txt` (one `index norm` line per
/// filter) into `dir`.
pub fn export_layer(model: &Network, index: usize, dir: impl AsRef<Path>) -> Result<(Rgb8, Vec<f64>)> {
    let dir = dir.as_ref();
    let filters = layer_filters(model, index)?;
    let grid = filter_grid(&filters)?;
    let norms = filter_norms(&filters)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ppm = dir.join("filters.ppm");
    fs::write(&ppm, grid.to_ppm()).map_err(|e| Error::io(&ppm, e))?;
    let text: String = norms.iter().enumerate().map(|(i, n)| format!("{i} {n}\n")).collect();
    let txt = dir.join("filter_norms.txt");
    fs::write(&txt, text).map_err(|e| Error::io(&txt, e))?;
    Ok((grid, norms))
}
