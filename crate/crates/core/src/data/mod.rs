//! Datasets, toy generators, IDX ingestion and semi-supervised splits.

pub mod idx;
mod split;
mod synth;

pub use idx::load_idx;
pub use split::{split_ssl, OverlapMode, SplitSpec, SslSplit};
pub use synth::{make_shapes, make_two_moons, Glyph};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleKind {
    Vector { dim: usize },
    Image { height: usize, width: usize },
}

impl SampleKind {
    pub fn feature_dim(&self) -> usize {
        match *self {
            SampleKind::Vector { dim } => dim,
            SampleKind::Image { height, width } => height * width,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `[N × d]` for vectors, `[N × h × w]` for images.
    samples: Tensor,
    labels: Vec<usize>,
    class_count: usize,
    kind: SampleKind,
}

impl Dataset {
    pub fn new(samples: Tensor, labels: Vec<usize>, class_count: usize, kind: SampleKind) -> Result<Self> {
        if samples.rows() != labels.len() {
            return Err(Error::shape(
                "dataset",
                format!("{} samples but {} labels", samples.rows(), labels.len()),
            ));
        }
        if samples.cols() != kind.feature_dim() {
            return Err(Error::shape(
                "dataset",
                format!("sample width {} does not match {kind:?}", samples.cols()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Label {
                row: labels.iter().position(|&l| l == bad).unwrap_or(0),
                detail: format!("label {bad} outside [0, {class_count})"),
            });
        }
        Ok(Self {
            samples,
            labels,
            class_count,
            kind,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn kind(&self) -> SampleKind {
        self.kind
    }

    pub fn feature_dim(&self) -> usize {
        self.kind.feature_dim()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        self.samples.row(i)
    }

    /// Samples at `indices` as a flat `[n × d]` matrix, ready for the model.
    pub fn gather(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.feature_dim());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        Tensor::new(vec![indices.len(), self.feature_dim()], data).expect("gather shape")
    }

    pub fn gather_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// Per-feature mean over the given rows (all rows when `indices` is empty).
    pub fn feature_means(&self, indices: &[usize]) -> Vec<f64> {
        let all: Vec<usize>;
        let rows = if indices.is_empty() {
            all = (0..self.len()).collect();
            &all
        } else {
            indices
        };
        let d = self.feature_dim();
        let mut mean = vec![0.0; d];
        for &i in rows {
            for (m, v) in mean.iter_mut().zip(self.sample(i)) {
                *m += v;
            }
        }
        let n = rows.len().max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Per-feature standard deviation over the given rows (all rows when empty).
    pub fn feature_stds(&self, indices: &[usize]) -> Vec<f64> {
        let mean = self.feature_means(indices);
        let all: Vec<usize>;
        let rows = if indices.is_empty() {
            all = (0..self.len()).collect();
            &all
        } else {
            indices
        };
        let mut var = vec![0.0; mean.len()];
        for &i in rows {
            for ((s, v), m) in var.iter_mut().zip(self.sample(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let n = rows.len().max(1) as f64;
        var.iter().map(|s| (s / n).sqrt()).collect()
    }

    /// Copy with every feature shifted by `means` and divided by `stds`.
    /// Features with zero spread are only shifted.
    pub fn standardized(&self, means: &[f64], stds: &[f64]) -> Result<Self> {
        let d = self.feature_dim();
        if means.len() != d || stds.len() != d {
            return Err(Error::shape(
                "standardize",
                format!("{d} features but {} means and {} stds", means.len(), stds.len()),
            ));
        }
        let mut samples = self.samples.clone();
        for (i, v) in samples.data_mut().iter_mut().enumerate() {
            let k = i % d;
            let s = if stds[k] > 0.0 { stds[k] } else { 1.0 };
            *v = (*v - means[k]) / s;
        }
        Ok(Self {
            samples,
            ..self.clone()
        })
    }
}
