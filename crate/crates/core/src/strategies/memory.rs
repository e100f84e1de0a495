use std::collections::BTreeMap;

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::generator::{generate_sample, GeneratorStore};
use crate::linalg::DenseMatrix;
use crate::nn::Batch;
use crate::scalar::Real;

/// Anything that can produce a labeled sample for a `(task, class)` cell.
pub trait ReferenceSource<T: Real> {
    fn contains(&self, task: usize, class: usize) -> bool;

    fn draw(&self, task: usize, class: usize, rng: &mut dyn RngCore) -> Result<Vec<T>>;
}

impl<T: Real> ReferenceSource<T> for GeneratorStore<T> {
    fn contains(&self, task: usize, class: usize) -> bool {
        self.get(task, class).is_some()
    }

    fn draw(&self, task: usize, class: usize, rng: &mut dyn RngCore) -> Result<Vec<T>> {
        generate_sample(self, task, class, rng).map(|(x, _)| x)
    }
}

/// Raw samples kept per `(task, class)`, with a per-task budget.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer<T> {
    num_pixels: usize,
    budget: usize,
    cells: BTreeMap<(usize, usize), Vec<Vec<T>>>,
}

impl<T: Real> ReplayBuffer<T> {
    pub fn new(num_pixels: usize, budget_per_task: usize) -> Self {
        Self {
            num_pixels,
            budget: budget_per_task,
            cells: BTreeMap::new(),
        }
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn samples(&self, task: usize, class: usize) -> &[Vec<T>] {
        self.cells.get(&(task, class)).map_or(&[], Vec::as_slice)
    }

    pub fn task_total(&self, task: usize) -> usize {
        self.cells
            .range((task, 0)..(task + 1, 0))
            .map(|(_, v)| v.len())
            .sum()
    }

    pub fn total(&self) -> usize {
        self.cells.values().map(Vec::len).sum()
    }

    pub fn push(&mut self, task: usize, class: usize, sample: Vec<T>) -> Result<()> {
        if sample.len() != self.num_pixels {
            return Err(Error::arg(format!(
                "sample has {} pixels, buffer expects {}",
                sample.len(),
                self.num_pixels
            )));
        }
        if self.task_total(task) >= self.budget {
            return Err(Error::arg(format!(
                "task {task} already holds its budget of {} samples",
                self.budget
            )));
        }
        self.cells.entry((task, class)).or_default().push(sample);
        Ok(())
    }
}

impl<T: Real> ReferenceSource<T> for ReplayBuffer<T> {
    fn contains(&self, task: usize, class: usize) -> bool {
        !self.samples(task, class).is_empty()
    }

    fn draw(&self, task: usize, class: usize, rng: &mut dyn RngCore) -> Result<Vec<T>> {
        let cell = self.samples(task, class);
        if cell.is_empty() {
            return Err(Error::MissingRecord { task, class });
        }
        Ok(cell[rng.random_range(0..cell.len())].clone())
    }
}

/// The per-method memory carried between tasks.
#[derive(Clone, Debug)]
pub enum Memory<T> {
    None,
    Buffer(ReplayBuffer<T>),
    Generators(GeneratorStore<T>),
}

impl<T: Real> Memory<T> {
    pub fn as_source(&self) -> Option<&dyn ReferenceSource<T>> {
        match self {
            Memory::None => None,
            Memory::Buffer(b) => Some(b),
            Memory::Generators(g) => Some(g),
        }
    }

    pub fn generators(&self) -> Option<&GeneratorStore<T>> {
        match self {
            Memory::Generators(g) => Some(g),
            _ => None,
        }
    }

    pub fn buffer(&self) -> Option<&ReplayBuffer<T>> {
        match self {
            Memory::Buffer(b) => Some(b),
            _ => None,
        }
    }
}

/// Draws `n` reference samples: uniform task in `0..seen_tasks`, uniform class
/// in `0..num_classes`, then one sample from that cell.
///
/// A class without an entry is redrawn up to `num_classes` times before the
/// lookup error is returned.
pub fn assemble_reference_batch<T: Real>(
    source: &dyn ReferenceSource<T>,
    n: usize,
    seen_tasks: usize,
    num_classes: usize,
    num_pixels: usize,
    rng: &mut dyn RngCore,
) -> Result<Batch<T>> {
    if n > 0 && (seen_tasks == 0 || num_classes == 0) {
        return Err(Error::arg("reference batch needs at least one task and class"));
    }
    let mut data = Vec::with_capacity(n * num_pixels);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let task = rng.random_range(0..seen_tasks);
        let mut class = rng.random_range(0..num_classes);
        let mut redraws = 0;
        while !source.contains(task, class) {
            if redraws == num_classes {
                return Err(Error::MissingRecord { task, class });
            }
            class = rng.random_range(0..num_classes);
            redraws += 1;
        }
        let x = source.draw(task, class, rng)?;
        if x.len() != num_pixels {
            return Err(Error::arg(format!(
                "source produced {} pixels, expected {num_pixels}",
                x.len()
            )));
        }
        data.extend_from_slice(&x);
        labels.push(class);
    }
    Batch::new(DenseMatrix::from_vec(n, num_pixels, data)?, labels)
}
