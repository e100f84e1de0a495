use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{rotate_dataset, Dataset};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Clockwise rotation per task, in task order.
pub const ROTATION_ANGLES: [f64; 10] = [0.0, 20.0, 40.0, 60.0, 80.0, 100.0, 120.0, 140.0, 160.0, 180.0];

/// Original-class pairs per task, in task order. Labels are remapped by parity.
pub const CLASS_SPLIT_PAIRS: [[usize; 2]; 10] = [
    [0, 1],
    [2, 3],
    [4, 5],
    [6, 7],
    [8, 9],
    [0, 3],
    [2, 5],
    [4, 7],
    [6, 9],
    [8, 1],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Rotation,
    ClassSplit,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Rotation => "rotation",
            Protocol::ClassSplit => "class_split",
        }
    }
}

/// How one task is derived from the shared source split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TaskView {
    Rotation { degrees: f64 },
    ClassPair { classes: [usize; 2] },
}

/// One materialized task.
#[derive(Clone, Debug, PartialEq)]
pub struct Task<T> {
    pub id: usize,
    pub train: Dataset<T>,
    pub validation: Dataset<T>,
}

/// Ordered task stream over a single train/validation split of the source.
///
/// Tasks are materialized on demand so that only the tasks currently in use
/// occupy memory; every call for the same index returns identical data.
#[derive(Clone, Debug)]
pub struct TaskSequence<T> {
    pub protocol: Protocol,
    /// Size of the shared label space seen by the learner.
    pub num_classes: usize,
    source_train: Dataset<T>,
    source_validation: Dataset<T>,
    views: Vec<TaskView>,
}

impl<T: Real> TaskSequence<T> {
    pub fn num_tasks(&self) -> usize {
        self.views.len()
    }

    pub fn views(&self) -> &[TaskView] {
        &self.views
    }

    pub fn num_pixels(&self) -> usize {
        self.source_train.num_pixels()
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        self.source_train.shape()
    }

    pub fn train(&self, k: usize) -> Result<Dataset<T>> {
        self.apply(k, &self.source_train)
    }

    pub fn validation(&self, k: usize) -> Result<Dataset<T>> {
        self.apply(k, &self.source_validation)
    }

    pub fn task(&self, k: usize) -> Result<Task<T>> {
        Ok(Task {
            id: k,
            train: self.train(k)?,
            validation: self.validation(k)?,
        })
    }

    fn apply(&self, k: usize, source: &Dataset<T>) -> Result<Dataset<T>> {
        let view = self
            .views
            .get(k)
            .ok_or_else(|| Error::arg(format!("task {k} out of range 0..{}", self.views.len())))?;
        match *view {
            TaskView::Rotation { degrees } => rotate_dataset(source, degrees),
            TaskView::ClassPair { classes } => {
                let idx: Vec<usize> = (0..source.len())
                    .filter(|&i| classes.contains(&source.labels[i]))
                    .collect();
                let mut ds = source.subset(&idx);
                ds.labels.iter_mut().for_each(|y| *y %= 2);
                ds.num_classes = 2;
                Ok(ds)
            }
        }
    }
}

/// Seeded split of `ds` into `(train, validation)`; both keep source order.
///
/// The validation part holds `round(n · val_fraction)` samples.
pub fn split_train_validation<T: Real>(
    ds: &Dataset<T>,
    val_fraction: f64,
    seed: u64,
) -> Result<(Dataset<T>, Dataset<T>)> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::arg(format!(
            "validation fraction {val_fraction} outside [0, 1)"
        )));
    }
    let n = ds.len();
    let n_val = (n as f64 * val_fraction).round() as usize;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val = perm[..n_val].to_vec();
    let mut train = perm[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((ds.subset(&train), ds.subset(&val)))
}

fn require_ten_classes<T: Real>(ds: &Dataset<T>) -> Result<()> {
    if ds.num_classes != 10 {
        return Err(Error::arg(format!(
            "task protocols need a 10-class dataset, got {} classes",
            ds.num_classes
        )));
    }
    Ok(())
}

/// Ten tasks, each the full dataset rotated clockwise by [`ROTATION_ANGLES`].
///
/// The train/validation split is made once on the unrotated source, so each
/// task's validation set holds the same underlying images.
pub fn build_rotation_tasks<T: Real>(
    ds: &Dataset<T>,
    val_fraction: f64,
    split_seed: u64,
) -> Result<TaskSequence<T>> {
    require_ten_classes(ds)?;
    if ds.height != ds.width {
        return Err(Error::arg("rotation tasks need square images"));
    }
    let (train, validation) = split_train_validation(ds, val_fraction, split_seed)?;
    Ok(TaskSequence {
        protocol: Protocol::Rotation,
        num_classes: 10,
        source_train: train,
        source_validation: validation,
        views: ROTATION_ANGLES
            .iter()
            .map(|&degrees| TaskView::Rotation { degrees })
            .collect(),
    })
}

/// Ten two-class tasks from [`CLASS_SPLIT_PAIRS`], labels mapped to
/// `class % 2`.
pub fn build_class_split_tasks<T: Real>(
    ds: &Dataset<T>,
    val_fraction: f64,
    split_seed: u64,
) -> Result<TaskSequence<T>> {
    require_ten_classes(ds)?;
    if let Some(empty) = ds.class_counts().iter().position(|&c| c == 0) {
        return Err(Error::arg(format!("class {empty} has no samples")));
    }
    let (train, validation) = split_train_validation(ds, val_fraction, split_seed)?;
    Ok(TaskSequence {
        protocol: Protocol::ClassSplit,
        num_classes: 2,
        source_train: train,
        source_validation: validation,
        views: CLASS_SPLIT_PAIRS
            .iter()
            .map(|&classes| TaskView::ClassPair { classes })
            .collect(),
    })
}
