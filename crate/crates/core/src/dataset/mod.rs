//! Image classification data and label-noise variants.

mod idx;
mod noise;

use std::path::PathBuf;

use thiserror::Error;

pub use idx::{decode_pair, encode_idx, load_idx, parse_idx, IdxTensor, IMAGES_MAGIC, LABELS_MAGIC};
pub use noise::{inject_label_noise, inject_label_noise_with, proper_accuracy, selected_count, NoiseMode, NoisyDataset};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: bad magic number 0x{found:08x} (expected 0x{expected:08x})")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },
    #[error("{path}: truncated file ({actual} bytes, need {expected})")]
    Truncated { path: PathBuf, expected: usize, actual: usize },
    #[error("image/label count mismatch: {images} images, {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed dataset: {0}")]
    Malformed(String),
    #[error("noise fraction {0} outside [0, 1]")]
    NoiseFraction(f64),
    #[error("class count {0} is below 2")]
    ClassCount(usize),
}

/// `N` examples of `D` features in `[0, 1]` with class labels in `[0, K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    num_classes: usize,
}

impl RawDataset {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>, num_classes: usize) -> Result<Self, DatasetError> {
        if dim == 0 {
            return Err(DatasetError::Malformed("feature dimension is zero".into()));
        }
        if features.len() != dim * labels.len() {
            return Err(DatasetError::Malformed(format!(
                "{} feature values for {} examples of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DatasetError::Malformed(format!("label {bad} outside [0, {num_classes})")));
        }
        Ok(RawDataset {
            features,
            dim,
            labels,
            num_classes,
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

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Row-major `N x D` feature matrix.
    pub fn feature_matrix(&self) -> &[f64] {
        &self.features
    }

    /// Overrides the class count, e.g. to declare `K = 10` for a subset
    /// that happens not to contain the highest class.
    pub fn with_num_classes(mut self, num_classes: usize) -> Result<Self, DatasetError> {
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= num_classes) {
            return Err(DatasetError::Malformed(format!("label {bad} outside [0, {num_classes})")));
        }
        self.num_classes = num_classes;
        Ok(self)
    }

    /// The first `n` examples (all of them if `n >= len`).
    pub fn head(&self, n: usize) -> RawDataset {
        let n = n.min(self.len());
        RawDataset {
            features: self.features[..n * self.dim].to_vec(),
            dim: self.dim,
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
        }
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        histogram(&self.labels, self.num_classes)
    }
}

pub(crate) fn histogram(labels: &[usize], num_classes: usize) -> Vec<usize> {
    let mut h = vec![0; num_classes];
    for &l in labels {
        h[l] += 1;
    }
    h
}
