//! In-memory datasets, synthetic two-class blobs and IDX file ingestion.

use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{domain, Result};
use crate::rng::{step_rng, SETUP_STREAM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Row-major feature matrix with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        dim: usize,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(domain("feature dimension must be >= 1"));
        }
        if features.len() != labels.len() * dim {
            return Err(domain(format!(
                "{} features do not form {} rows of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(domain("features must be finite"));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(domain(format!("label {bad} outside [0, {num_classes})")));
        }
        Ok(Dataset {
            features,
            labels,
            dim,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn y(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Largest ℓ₂ norm of any feature row.
    pub fn max_feature_norm(&self) -> f64 {
        (0..self.len())
            .map(|i| self.x(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Rows `range` as a new dataset with the given split tag.
    pub fn slice(&self, range: std::ops::Range<usize>, split: Split) -> Dataset {
        Dataset {
            features: self.features[range.start * self.dim..range.end * self.dim].to_vec(),
            labels: self.labels[range].to_vec(),
            dim: self.dim,
            num_classes: self.num_classes,
            split,
        }
    }

    /// Keeps the first `n` rows.
    pub fn truncate(&mut self, n: usize) {
        let n = n.min(self.len());
        self.labels.truncate(n);
        self.features.truncate(n * self.dim);
    }
}

/// Two Gaussian blobs with identity covariance whose means sit at
/// ±(separation/2)·u for the unit diagonal direction u. Labels alternate, so
/// classes are balanced. The Bayes accuracy is Φ(separation/2).
pub fn gen_synthetic(n: usize, dim: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || dim == 0 {
        return Err(domain("synthetic dataset needs n >= 1 and dim >= 1"));
    }
    if !separation.is_finite() || separation < 0.0 {
        return Err(domain(format!("separation must be finite and >= 0, got {separation}")));
    }
    let mut rng = step_rng(seed, SETUP_STREAM);
    let shift = 0.5 * separation / (dim as f64).sqrt();
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % 2;
        let sign = if y == 1 { 1.0 } else { -1.0 };
        for _ in 0..dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            features.push(sign * shift + z);
        }
        labels.push(y);
    }
    Dataset::new(features, labels, dim, 2, Split::Train)
}

/// IDX parsing failures; offsets are byte positions in the file.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdxError {
    #[error("truncated IDX data at byte {offset}: missing {missing} bytes")]
    Truncated { offset: usize, missing: usize },
    #[error("bad IDX magic 0x{found:08x} at byte 0 (expected 0x{expected:08x})")]
    BadMagic { found: u32, expected: u32 },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("{trailing} trailing bytes after IDX payload at byte {offset}")]
    Trailing { offset: usize, trailing: usize },
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], IdxError> {
        let available = self.bytes.len() - self.pos;
        if available < n {
            return Err(IdxError::Truncated {
                offset: self.bytes.len(),
                missing: n - available,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32_be(&mut self) -> std::result::Result<u32, IdxError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn finish(&self) -> std::result::Result<(), IdxError> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(IdxError::Trailing {
                offset: self.pos,
                trailing: self.bytes.len() - self.pos,
            })
        }
    }
}

/// Images from an IDX3 (`0x00000803`) buffer: (count, rows·cols, pixels/255).
pub fn parse_idx_images(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<f64>), IdxError> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.u32_be()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(IdxError::BadMagic {
            found: magic,
            expected: IDX_IMAGES_MAGIC,
        });
    }
    let count = c.u32_be()? as usize;
    let rows = c.u32_be()? as usize;
    let cols = c.u32_be()? as usize;
    let pixels = c.take(count * rows * cols)?;
    c.finish()?;
    Ok((
        count,
        rows * cols,
        pixels.iter().map(|&b| b as f64 / 255.0).collect(),
    ))
}

/// Labels from an IDX1 (`0x00000801`) buffer.
pub fn parse_idx_labels(bytes: &[u8]) -> std::result::Result<Vec<u8>, IdxError> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.u32_be()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(IdxError::BadMagic {
            found: magic,
            expected: IDX_LABELS_MAGIC,
        });
    }
    let count = c.u32_be()? as usize;
    let labels = c.take(count)?.to_vec();
    c.finish()?;
    Ok(labels)
}

/// Loads an image/label IDX pair. The class count is `max label + 1`, at
/// least 2.
pub fn load_idx(images: &Path, labels: &Path, split: Split) -> Result<Dataset> {
    let (count, dim, pixels) = parse_idx_images(&std::fs::read(images)?)?;
    let raw = parse_idx_labels(&std::fs::read(labels)?)?;
    if raw.len() != count {
        return Err(IdxError::CountMismatch {
            images: count,
            labels: raw.len(),
        }
        .into());
    }
    let num_classes = raw.iter().map(|&y| y as usize + 1).max().unwrap_or(2).max(2);
    Dataset::new(
        pixels,
        raw.into_iter().map(usize::from).collect(),
        dim,
        num_classes,
        split,
    )
}
