//! Digit data: IDX containers, 28×28 → 10×10 downsampling and a synthetic generator.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded_rng};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const SOURCE_SIDE: usize = 28;
pub const TARGET_SIDE: usize = 10;

/// An unsigned-byte IDX container.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxFile {
    pub magic: u32,
    pub dims: Vec<u32>,
    pub payload: Vec<u8>,
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse { offset, message: "truncated header".into() })
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxFile> {
    let magic = read_u32(bytes, 0)?;
    let ndims = match magic {
        IMAGE_MAGIC => 3,
        LABEL_MAGIC => 1,
        other => {
            return Err(Error::Parse { offset: 0, message: format!("unsupported magic number {other:#010x}") });
        }
    };
    let dims = (0..ndims).map(|i| read_u32(bytes, 4 + 4 * i)).collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * ndims;
    let expected = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize)).ok_or_else(|| {
        Error::Parse { offset: 4, message: "dimension product overflows".into() }
    })?;
    let available = bytes.len() - header;
    if available < expected {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!("payload truncated: expected {expected} bytes, found {available}"),
        });
    }
    if available > expected {
        return Err(Error::Parse {
            offset: header + expected,
            message: format!("{} trailing bytes after payload", available - expected),
        });
    }
    Ok(IdxFile { magic, dims, payload: bytes[header..].to_vec() })
}

impl IdxFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.payload.len());
        out.extend_from_slice(&self.magic.to_be_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn count(&self) -> usize {
        self.dims[0] as usize
    }

    /// Item `i` of an image file as raw bytes.
    pub fn image(&self, i: usize) -> Result<&[u8]> {
        if self.magic != IMAGE_MAGIC {
            return Err(Error::Shape("not an image file".into()));
        }
        let size = (self.dims[1] * self.dims[2]) as usize;
        self.payload
            .get(i * size..(i + 1) * size)
            .ok_or_else(|| Error::Shape(format!("image {i} out of range")))
    }
}

/// Map `[0, 255]` onto `[0, 1]`.
pub fn normalize_pixels(bytes: &[u8]) -> Vec<f64> {
    bytes.iter().map(|&b| b as f64 / 255.0).collect()
}

/// Overlap of source cell `[i, i+1)` with target cell `[o·r, (o+1)·r)`.
fn overlap(i: usize, o: usize, ratio: f64) -> f64 {
    let lo = (o as f64 * ratio).max(i as f64);
    let hi = ((o + 1) as f64 * ratio).min(i as f64 + 1.0);
    (hi - lo).max(0.0)
}

/// Area-weighted average pooling from 28×28 to 10×10 (each target pixel covers 2.8×2.8 source pixels).
pub fn downsample_10x10(image: &[f64]) -> Result<Vec<f64>> {
    if image.len() != SOURCE_SIDE * SOURCE_SIDE {
        return Err(Error::Shape(format!("expected a 28x28 image, got {} pixels", image.len())));
    }
    let ratio = SOURCE_SIDE as f64 / TARGET_SIDE as f64;
    let area = ratio * ratio;
    // Separable weights: weights[o] lists (source index, overlap).
    let weights: Vec<Vec<(usize, f64)>> = (0..TARGET_SIDE)
        .map(|o| {
            (0..SOURCE_SIDE)
                .map(|i| (i, overlap(i, o, ratio)))
                .filter(|&(_, w)| w > 0.0)
                .collect()
        })
        .collect();
    let mut out = vec![0.0; TARGET_SIDE * TARGET_SIDE];
    for (r, wr) in weights.iter().enumerate() {
        for (c, wc) in weights.iter().enumerate() {
            let mut acc = 0.0;
            for &(sr, a) in wr {
                for &(sc, b) in wc {
                    acc += a * b * image[sr * SOURCE_SIDE + sc];
                }
            }
            out[r * TARGET_SIDE + c] = acc / area;
        }
    }
    Ok(out)
}

/// Flat row-major inputs with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
    pub dim: usize,
    pub classes: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, labels: Vec<usize>, dim: usize, classes: usize) -> Result<Self> {
        if dim == 0 || inputs.len() != labels.len() * dim {
            return Err(Error::Shape(format!(
                "{} input values do not form {} rows of width {dim}",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Shape(format!("label {bad} outside [0, {classes})")));
        }
        Ok(Self { inputs, labels, dim, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let inputs = idx.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        Self { inputs, labels, dim: self.dim, classes: self.classes }
    }

    /// Seeded random subset of `n` rows.
    pub fn subset(&self, n: usize, seed: u64) -> Result<Self> {
        if n > self.len() {
            return Err(Error::Config(format!("subset of {n} from {} rows", self.len())));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut seeded_rng(seed));
        idx.truncate(n);
        idx.sort_unstable();
        Ok(self.select(&idx))
    }

    /// First `n` rows and the rest.
    pub fn split_at(&self, n: usize) -> (Self, Self) {
        let n = n.min(self.len());
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        (self.select(&head), self.select(&tail))
    }

    /// Fraction of rows with the most frequent label.
    pub fn majority_rate(&self) -> f64 {
        let mut counts = vec![0usize; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts.into_iter().max().unwrap_or(0) as f64 / self.len().max(1) as f64
    }
}

/// Class-conditional images on the 10×10 grid: each class has a prototype made of
/// two Gaussian bumps, and samples add pixel noise before clipping to `[0, 1]`.
pub fn synthetic_digits(m: usize, classes: usize, seed: u64, noise: f64) -> Result<Dataset> {
    if classes == 0 || m < classes {
        return Err(Error::Config(format!("need m >= classes >= 1, got m = {m}, classes = {classes}")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Config(format!("noise must be non-negative, got {noise}")));
    }
    let side = TARGET_SIDE;
    let mut proto_rng = seeded_rng(derive_seed(seed, &[0]));
    let prototypes: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let bumps: Vec<(f64, f64)> = (0..2)
                .map(|_| (proto_rng.random_range(1.0..(side as f64 - 2.0)), proto_rng.random_range(1.0..(side as f64 - 2.0))))
                .collect();
            let img: Vec<f64> = (0..side * side)
                .map(|p| {
                    let (r, c) = ((p / side) as f64, (p % side) as f64);
                    bumps
                        .iter()
                        .map(|&(br, bc)| (-((r - br).powi(2) + (c - bc).powi(2)) / (2.0 * 1.5 * 1.5)).exp())
                        .fold(0.0, f64::max)
                })
                .collect();
            img
        })
        .collect();
    let mut labels: Vec<usize> = (0..m).map(|i| i % classes).collect();
    let mut rng = seeded_rng(derive_seed(seed, &[1]));
    labels.shuffle(&mut rng);
    let pixel = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).map_err(|e| Error::Config(e.to_string()))?;
    let mut inputs = Vec::with_capacity(m * side * side);
    for &l in &labels {
        for &v in &prototypes[l] {
            let x = if noise > 0.0 { v + pixel.sample(&mut rng) } else { v };
            inputs.push(x.clamp(0.0, 1.0));
        }
    }
    Dataset::new(inputs, labels, side * side, classes)
}

/// Nearest-centroid accuracy of `test` using class means from `train`.
pub fn nearest_centroid_accuracy(train: &Dataset, test: &Dataset) -> f64 {
    let mut centroids = vec![vec![0.0; train.dim]; train.classes];
    let mut counts = vec![0usize; train.classes];
    for i in 0..train.len() {
        let l = train.labels[i];
        counts[l] += 1;
        for (c, x) in centroids[l].iter_mut().zip(train.row(i)) {
            *c += x;
        }
    }
    for (c, &n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= n.max(1) as f64);
    }
    let hits = (0..test.len())
        .filter(|&i| {
            let x = test.row(i);
            let best = centroids
                .iter()
                .enumerate()
                .map(|(k, c)| (k, c.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(k, _)| k);
            best == Some(test.labels[i])
        })
        .count();
    hits as f64 / test.len().max(1) as f64
}

fn read_file(path: &Path) -> Result<IdxFile> {
    let bytes = std::fs::read(path)?;
    parse_idx(&bytes)
}

/// Pair an image file with a label file, downsample to 10×10 and normalize.
pub fn dataset_from_idx(images: &IdxFile, labels: &IdxFile) -> Result<Dataset> {
    if images.magic != IMAGE_MAGIC || labels.magic != LABEL_MAGIC {
        return Err(Error::Shape("expected an image file and a label file".into()));
    }
    if images.count() != labels.count() {
        return Err(Error::Shape(format!(
            "{} images but {} labels",
            images.count(),
            labels.count()
        )));
    }
    if images.dims[1] as usize != SOURCE_SIDE || images.dims[2] as usize != SOURCE_SIDE {
        return Err(Error::Shape(format!("expected 28x28 images, got {}x{}", images.dims[1], images.dims[2])));
    }
    let mut inputs = Vec::with_capacity(images.count() * TARGET_SIDE * TARGET_SIDE);
    for i in 0..images.count() {
        inputs.extend(downsample_10x10(&normalize_pixels(images.image(i)?))?);
    }
    let labels: Vec<usize> = labels.payload.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(0, |&m| m + 1).max(10);
    Dataset::new(inputs, labels, TARGET_SIDE * TARGET_SIDE, classes)
}

/// Load the conventional four-file layout from a directory: `(train, test)`.
pub fn load_idx_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let load = |img: &str, lab: &str| -> Result<Dataset> {
        dataset_from_idx(&read_file(&dir.join(img))?, &read_file(&dir.join(lab))?)
    };
    Ok((
        load("train-images-idx3-ubyte", "train-labels-idx1-ubyte")?,
        load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?,
    ))
}
