//! CIFAR-10 binary batches, normalization, flipping and class-balanced subsets.
//!
//! A batch file holds 10000 records of 3073 bytes: one label byte followed by
//! the 32x32 red, green and blue planes, each row-major.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CLASSES: usize = 10;
pub const CHANNELS: usize = 3;
pub const SIDE: usize = 32;
pub const PIXELS: usize = CHANNELS * SIDE * SIDE;
pub const RECORD_BYTES: usize = PIXELS + 1;
pub const RECORDS_PER_BATCH: usize = 10_000;

pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub label: usize,
    /// `(3, 32, 32)`
    pub pixels: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitRole {
    Train,
    Validation,
}

impl SplitRole {
    pub fn name(self) -> &'static str {
        match self {
            SplitRole::Train => "train",
            SplitRole::Validation => "val",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub records: Vec<ImageRecord>,
    pub role: SplitRole,
}

impl DatasetSplit {
    pub fn new(records: Vec<ImageRecord>, role: SplitRole) -> Self {
        Self { records, role }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// Stacks the given records into an `(N, C, H, W)` batch. Entries whose
    /// `flip` flag is set are mirrored horizontally.
    pub fn batch(&self, indices: &[usize], flip: Option<&[bool]>) -> Result<(Tensor, Vec<usize>)> {
        let first = self
            .records
            .get(*indices.first().ok_or_else(|| Error::Usage("empty batch".into()))?)
            .ok_or_else(|| Error::Usage("batch index out of range".into()))?;
        let shape = first.pixels.shape().to_vec();
        let mut data = Vec::with_capacity(indices.len() * first.pixels.len());
        let mut labels = Vec::with_capacity(indices.len());
        for (slot, &i) in indices.iter().enumerate() {
            let rec = self
                .records
                .get(i)
                .ok_or_else(|| Error::Usage(format!("batch index {i} out of range")))?;
            if flip.is_some_and(|f| f[slot]) {
                data.extend_from_slice(horizontal_flip(&rec.pixels)?.data());
            } else {
                data.extend_from_slice(rec.pixels.data());
            }
            labels.push(rec.label);
        }
        let mut dims = vec![indices.len()];
        dims.extend(shape);
        Ok((Tensor::new(&dims, data)?, labels))
    }

    /// Standardizes every record in place, reusing the pixel buffers.
    pub fn into_normalized(mut self, stats: &NormStats) -> Result<DatasetSplit> {
        for r in &mut self.records {
            stats.normalize_in_place(&mut r.pixels)?;
        }
        Ok(self)
    }

    pub fn normalized(&self, stats: &NormStats) -> Result<DatasetSplit> {
        let records = self
            .records
            .iter()
            .map(|r| {
                Ok(ImageRecord {
                    label: r.label,
                    pixels: stats.normalize(&r.pixels)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(DatasetSplit {
            records,
            role: self.role,
        })
    }
}

fn check_batch_bytes(bytes: &[u8], path: &Path) -> Result<()> {
    let expected = RECORDS_PER_BATCH * RECORD_BYTES;
    if bytes.len() != expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!(
                "expected {expected} bytes ({RECORDS_PER_BATCH} records of {RECORD_BYTES}), found {}",
                bytes.len()
            ),
        });
    }
    if let Some((i, rec)) = bytes
        .chunks(RECORD_BYTES)
        .enumerate()
        .find(|(_, rec)| rec[0] as usize >= CLASSES)
    {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("record {i} has label byte {}", rec[0]),
        });
    }
    Ok(())
}

fn read_batch_bytes(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    check_batch_bytes(&bytes, path)?;
    Ok(bytes)
}

fn decode_record(rec: &[u8]) -> ImageRecord {
    let pixels = rec[1..].iter().map(|&b| f64::from(b) / 255.0).collect();
    ImageRecord {
        label: rec[0] as usize,
        pixels: Tensor::new(&[CHANNELS, SIDE, SIDE], pixels).expect("record geometry"),
    }
}

/// Decodes an in-memory batch, validating it exactly like a file.
pub fn decode_cifar_batch(bytes: &[u8], origin: &Path) -> Result<Vec<ImageRecord>> {
    check_batch_bytes(bytes, origin)?;
    Ok(bytes.chunks(RECORD_BYTES).map(decode_record).collect())
}

/// Reads one binary batch; pixels are scaled to `[0, 1]`.
pub fn load_cifar_batch(path: impl AsRef<Path>) -> Result<Vec<ImageRecord>> {
    let path = path.as_ref();
    let bytes = read_batch_bytes(path)?;
    Ok(bytes.chunks(RECORD_BYTES).map(decode_record).collect())
}

/// Inverse of decoding for `[0, 1]` pixels: `round(255 p)` per byte.
pub fn encode_cifar_batch(records: &[ImageRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(records.len() * RECORD_BYTES);
    for r in records {
        if r.label >= CLASSES || r.pixels.shape() != [CHANNELS, SIDE, SIDE] {
            return Err(Error::Data(format!(
                "cannot encode record with label {} and shape {:?}",
                r.label,
                r.pixels.shape()
            )));
        }
        out.push(r.label as u8);
        for &p in r.pixels.data() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Data(format!("pixel {p} outside [0, 1]")));
            }
            out.push((p * 255.0).round() as u8);
        }
    }
    Ok(out)
}

/// Loads the training or validation split of a CIFAR-10 binary directory.
/// With `per_class`, only a class-balanced subset is decoded.
pub fn load_split(
    dir: impl AsRef<Path>,
    role: SplitRole,
    per_class: Option<usize>,
    seed: u64,
) -> Result<DatasetSplit> {
    let dir = dir.as_ref();
    let files: Vec<&str> = match role {
        SplitRole::Train => TRAIN_FILES.to_vec(),
        SplitRole::Validation => vec![TEST_FILE],
    };
    let mut raw = Vec::with_capacity(files.len() * RECORDS_PER_BATCH * RECORD_BYTES);
    for f in files {
        raw.extend(read_batch_bytes(&dir.join(f))?);
    }
    let labels: Vec<usize> = raw.chunks(RECORD_BYTES).map(|r| r[0] as usize).collect();
    let chosen = match per_class {
        Some(k) => subset_indices(&labels, k, seed)?,
        None => (0..labels.len()).collect(),
    };
    let records = chosen
        .iter()
        .map(|&i| decode_record(&raw[i * RECORD_BYTES..(i + 1) * RECORD_BYTES]))
        .collect();
    Ok(DatasetSplit { records, role })
}

/// Mirrors every row of a `(C, H, W)` image.
pub fn horizontal_flip(image: &Tensor) -> Result<Tensor> {
    let w = match *image.shape() {
        [_, _, w] => w,
        _ => {
            return Err(Error::Shape(format!(
                "flip expects (C, H, W), got {:?}",
                image.shape()
            )))
        }
    };
    let data = image
        .data()
        .chunks(w)
        .flat_map(|row| row.iter().rev().copied())
        .collect();
    Tensor::new(image.shape(), data)
}

/// Per-channel mean and (population) standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn from_split(split: &DatasetSplit) -> Result<Self> {
        let first = split
            .records
            .first()
            .ok_or_else(|| Error::Data("cannot compute statistics of an empty split".into()))?;
        let c = first.pixels.shape()[0];
        let plane = first.pixels.len() / c;
        let mut sum = vec![0.0; c];
        for r in &split.records {
            for (ch, s) in sum.iter_mut().enumerate() {
                *s += r.pixels.data()[ch * plane..(ch + 1) * plane].iter().sum::<f64>();
            }
        }
        let count = (split.len() * plane) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let mut sq = vec![0.0; c];
        for r in &split.records {
            for (ch, s) in sq.iter_mut().enumerate() {
                *s += r.pixels.data()[ch * plane..(ch + 1) * plane]
                    .iter()
                    .map(|v| (v - mean[ch]).powi(2))
                    .sum::<f64>();
            }
        }
        let std: Vec<f64> = sq.iter().map(|s| (s / count).sqrt()).collect();
        // Spread below round-off of the mean counts as none.
        if let Some(ch) = (0..c).position(|ch| std[ch].is_nan() || std[ch] <= 1e-12 * mean[ch].abs().max(1.0)) {
            return Err(Error::Data(format!("channel {ch} has zero spread")));
        }
        Ok(Self { mean, std })
    }

    pub fn normalize_in_place(&self, image: &mut Tensor) -> Result<()> {
        let c = self.mean.len();
        if image.shape().first() != Some(&c) {
            return Err(Error::Shape(format!(
                "normalization for {c} channels applied to {:?}",
                image.shape()
            )));
        }
        let plane = image.len() / c;
        for (ch, px) in image.data_mut().chunks_mut(plane).enumerate() {
            for v in px {
                *v = (*v - self.mean[ch]) / self.std[ch];
            }
        }
        Ok(())
    }

    pub fn normalize(&self, image: &Tensor) -> Result<Tensor> {
        let c = self.mean.len();
        if image.shape().first() != Some(&c) {
            return Err(Error::Shape(format!(
                "normalization for {c} channels applied to {:?}",
                image.shape()
            )));
        }
        let plane = image.len() / c;
        let data = image
            .data()
            .chunks(plane)
            .enumerate()
            .flat_map(|(ch, px)| px.iter().map(move |v| (v - self.mean[ch]) / self.std[ch]))
            .collect();
        Tensor::new(image.shape(), data)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, (m, d)) in self.mean.iter().zip(&self.std).enumerate() {
            let _ = writeln!(s, "mean_{i}={m}");
            let _ = writeln!(s, "std_{i}={d}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut mean = Vec::new();
        let mut std = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Data(format!("bad statistics line {line:?}")))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("bad number in {line:?}")))?;
            let (name, idx) = key
                .trim()
                .split_once('_')
                .and_then(|(n, i)| Some((n, i.parse::<usize>().ok()?)))
                .ok_or_else(|| Error::Data(format!("bad statistics key in {line:?}")))?;
            let target = match name {
                "mean" => &mut mean,
                "std" => &mut std,
                _ => return Err(Error::Data(format!("unknown statistic {name:?}"))),
            };
            if target.len() <= idx {
                target.resize(idx + 1, f64::NAN);
            }
            target[idx] = value;
        }
        if mean.is_empty() || mean.len() != std.len() || mean.iter().chain(&std).any(|v| v.is_nan()) {
            return Err(Error::Data("incomplete normalization statistics".into()));
        }
        if std.iter().any(|&s| s <= 0.0) {
            return Err(Error::Data("non-positive standard deviation".into()));
        }
        Ok(Self { mean, std })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Class-balanced selection of `per_class` indices for every class present,
/// returned in ascending index order.
pub fn subset_indices(labels: &[usize], per_class: usize, seed: u64) -> Result<Vec<usize>> {
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(per_class * classes);
    for (class, mut members) in by_class.into_iter().enumerate() {
        if members.len() < per_class {
            return Err(Error::Usage(format!(
                "class {class} has {} records, cannot take {per_class}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        chosen.extend_from_slice(&members[..per_class]);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

pub fn subset(split: &DatasetSplit, per_class: usize, seed: u64) -> Result<DatasetSplit> {
    let idx = subset_indices(&split.labels(), per_class, seed)?;
    Ok(DatasetSplit {
        records: idx.into_iter().map(|i| split.records[i].clone()).collect(),
        role: split.role,
    })
}
