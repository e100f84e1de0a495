//! Datasets and the task streams built from them.

mod idx;
mod protocols;
mod rotate;
mod synthetic;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::nn::Batch;
use crate::scalar::Real;

pub use idx::{load_idx, parse_idx, write_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use protocols::{
    build_class_split_tasks, build_rotation_tasks, split_train_validation, Protocol, Task,
    TaskSequence, TaskView, CLASS_SPLIT_PAIRS, ROTATION_ANGLES,
};
pub use rotate::rotate_dataset;
pub use synthetic::synthetic_dataset;

/// Labeled images, flattened one per row with values in `[0, 1]`.
///
/// Multi-channel images are stored channel-major (`C x H x W`).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub images: DenseMatrix<T>,
    pub labels: Vec<usize>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub num_classes: usize,
}

impl<T: Real> Dataset<T> {
    pub fn new(
        images: DenseMatrix<T>,
        labels: Vec<usize>,
        (height, width, channels): (usize, usize, usize),
        num_classes: usize,
    ) -> Result<Self> {
        if images.cols() != height * width * channels {
            return Err(Error::arg(format!(
                "{} pixels per row but shape {height}x{width}x{channels}",
                images.cols()
            )));
        }
        if images.rows() != labels.len() {
            return Err(Error::arg(format!(
                "{} images but {} labels",
                images.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::arg(format!(
                "label {bad} outside declared {num_classes} classes"
            )));
        }
        Ok(Self {
            images,
            labels,
            height,
            width,
            channels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Pixels per sample, `height · width · channels`.
    pub fn num_pixels(&self) -> usize {
        self.images.cols()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: self.images.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            height: self.height,
            width: self.width,
            channels: self.channels,
            num_classes: self.num_classes,
        }
    }

    pub fn batch(&self, indices: &[usize]) -> Batch<T> {
        Batch {
            inputs: self.images.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Whole dataset as one batch.
    pub fn as_batch(&self) -> Batch<T> {
        Batch {
            inputs: self.images.clone(),
            labels: self.labels.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}
