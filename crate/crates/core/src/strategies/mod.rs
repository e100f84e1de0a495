//! Training strategies: plain SGD, A-GEM and Experience Replay, each with a
//! raw-sample buffer or with SVD generators as the memory.
//!
//! The A-GEM and ER variants share one epoch loop; the only thing that
//! differs between the raw and generator versions is the [`ReferenceSource`]
//! handed to it.

mod config;
mod memory;

use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::generator::{store_generator, GeneratorStore};
use crate::linalg::dot;
use crate::metrics::{avg_validation_accuracy, RunRecord};
use crate::nn::{init_params_with, loss_and_grad, sgd_step, GradientVector, MlpParams};
use crate::scalar::Real;
use crate::tasks::{Dataset, TaskSequence};

pub use config::{Method, StrategyConfig};
pub use memory::{assemble_reference_batch, Memory, ReferenceSource, ReplayBuffer};

const INIT_STREAM: u64 = 0;
const ORDER_STREAM: u64 = 1;
const MEMORY_STREAM: u64 = 2;

/// Independent random streams of a run, all derived from one seed.
///
/// Mini-batch order and memory draws use separate streams, so drawing
/// reference samples never perturbs the data order.
#[derive(Clone, Debug)]
pub struct TrainRngs {
    pub order: ChaCha8Rng,
    pub memory: ChaCha8Rng,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl TrainRngs {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            order: stream(seed, ORDER_STREAM),
            memory: stream(seed, MEMORY_STREAM),
        }
    }
}

/// Initial parameters of a run.
pub fn initial_params<T: Real>(seed: u64, dims: &[usize]) -> Result<MlpParams<T>> {
    init_params_with(&mut stream(seed, INIT_STREAM), dims)
}

/// How a step combines the current batch with the reference batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateRule {
    /// Project the batch gradient against the reference gradient.
    Agem,
    /// Take the gradient of the mean loss over batch ∪ reference.
    Replay,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpochStats {
    pub steps: usize,
    /// Steps on which the A-GEM projection branch was taken.
    pub projections: usize,
    /// Largest `|g̃ · g_ref| / (‖g‖ ‖g_ref‖)` over projected steps.
    pub max_projected_cosine: f64,
    pub mean_loss: f64,
}

/// A-GEM gradient correction.
///
/// Returns `g` unchanged when `g · g_ref ≥ 0`, otherwise removes the
/// component of `g` along `g_ref`.
pub fn agem_project<T: Real>(g: &GradientVector<T>, g_ref: &GradientVector<T>) -> Result<GradientVector<T>> {
    if g.len() != g_ref.len() {
        return Err(Error::arg(format!(
            "gradient lengths differ: {} vs {}",
            g.len(),
            g_ref.len()
        )));
    }
    let d = dot(&g.values, &g_ref.values);
    if d >= T::zero() {
        return Ok(g.clone());
    }
    let scale = d / dot(&g_ref.values, &g_ref.values);
    let values = g
        .values
        .iter()
        .zip(&g_ref.values)
        .map(|(&a, &b)| a - scale * b)
        .collect();
    Ok(GradientVector {
        layout: g.layout.clone(),
        values,
    })
}

/// One pass over `data` in shuffled mini-batches.
///
/// Memory is consulted only when `source` is present and `task_index > 0`;
/// otherwise every step is plain SGD on the batch loss.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch<T: Real>(
    params: &mut MlpParams<T>,
    data: &Dataset<T>,
    task_index: usize,
    num_classes: usize,
    source: Option<&dyn ReferenceSource<T>>,
    rule: UpdateRule,
    config: &StrategyConfig,
    rngs: &mut TrainRngs,
) -> Result<EpochStats> {
    if data.is_empty() {
        return Err(Error::arg("task has no training data"));
    }
    let eta = T::from_f64_lossy(config.learning_rate);
    let n_ref = config.reference_batch_size();
    let p = data.num_pixels();
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rngs.order);

    let mut stats = EpochStats::default();
    let mut loss_sum = 0.0;
    for chunk in order.chunks(config.batch_size) {
        let batch = data.batch(chunk);
        let memory = match source {
            Some(src) if task_index > 0 => Some(assemble_reference_batch(
                src,
                n_ref,
                task_index,
                num_classes,
                p,
                &mut rngs.memory as &mut dyn RngCore,
            )?),
            _ => None,
        };
        let (loss, step) = match (rule, memory) {
            (_, None) => loss_and_grad(params, &batch)?,
            (UpdateRule::Agem, Some(m)) => {
                let (loss, g) = loss_and_grad(params, &batch)?;
                if m.is_empty() {
                    (loss, g)
                } else {
                    let (_, g_ref) = loss_and_grad(params, &m)?;
                    let projected = agem_project(&g, &g_ref)?;
                    if projected.values != g.values {
                        stats.projections += 1;
                        let denom = norm_f64(&g.values) * norm_f64(&g_ref.values);
                        let cos = dot(&projected.values, &g_ref.values).to_f64_lossy().abs() / denom;
                        stats.max_projected_cosine = stats.max_projected_cosine.max(cos);
                    }
                    (loss, projected)
                }
            }
            (UpdateRule::Replay, Some(m)) => loss_and_grad(params, &batch.concat(&m)?)?,
        };
        sgd_step(params, &step, eta)?;
        loss_sum += loss.to_f64_lossy();
        stats.steps += 1;
    }
    stats.mean_loss = loss_sum / stats.steps as f64;
    Ok(stats)
}

fn norm_f64<T: Real>(v: &[T]) -> f64 {
    dot(v, v).to_f64_lossy().sqrt()
}

/// A-GEM on one task for `epochs_per_task` epochs.
pub fn train_task_agem<T: Real>(
    params: &mut MlpParams<T>,
    task_data: &Dataset<T>,
    task_index: usize,
    source: Option<&dyn ReferenceSource<T>>,
    config: &StrategyConfig,
    rngs: &mut TrainRngs,
) -> Result<Vec<EpochStats>> {
    (0..config.epochs_per_task)
        .map(|_| {
            train_epoch(
                params,
                task_data,
                task_index,
                task_data.num_classes,
                source,
                UpdateRule::Agem,
                config,
                rngs,
            )
        })
        .collect()
}

/// Experience Replay on one task for `epochs_per_task` epochs.
pub fn train_task_er<T: Real>(
    params: &mut MlpParams<T>,
    task_data: &Dataset<T>,
    task_index: usize,
    source: Option<&dyn ReferenceSource<T>>,
    config: &StrategyConfig,
    rngs: &mut TrainRngs,
) -> Result<Vec<EpochStats>> {
    (0..config.epochs_per_task)
        .map(|_| {
            train_epoch(
                params,
                task_data,
                task_index,
                task_data.num_classes,
                source,
                UpdateRule::Replay,
                config,
                rngs,
            )
        })
        .collect()
}

/// Empty memory matching the method.
pub fn new_memory<T: Real>(config: &StrategyConfig, num_pixels: usize) -> Result<Memory<T>> {
    Ok(match config.method {
        Method::Sgd => Memory::None,
        Method::AgemRaw | Method::ErRaw => {
            Memory::Buffer(ReplayBuffer::new(num_pixels, config.samples_per_task))
        }
        Method::AgemGen | Method::ErGen => {
            Memory::Generators(GeneratorStore::new(num_pixels, config.rank)?)
        }
    })
}

/// After task `k`: draw `s` samples without replacement, split them by class
/// and either fit one generator per class or keep the raw samples.
pub fn end_of_task_update<T: Real>(
    task_data: &Dataset<T>,
    task_index: usize,
    config: &StrategyConfig,
    memory: &mut Memory<T>,
    rng: &mut dyn RngCore,
) -> Result<()> {
    if matches!(memory, Memory::None) {
        return Ok(());
    }
    let n = task_data.len();
    let mut s = config.samples_per_task;
    if s > n {
        log::warn!("task {task_index}: only {n} samples available, storing {n} instead of {s}");
        s = n;
    }
    let picked = index::sample(rng, n, s).into_vec();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); task_data.num_classes];
    for i in picked {
        by_class[task_data.labels[i]].push(i);
    }
    for (class, idx) in by_class.iter().enumerate() {
        if idx.is_empty() {
            log::warn!("task {task_index}: class {class} received no samples; nothing stored");
            continue;
        }
        match memory {
            Memory::Generators(store) => {
                // columns are samples
                let data = task_data.images.select_rows(idx).transpose();
                store_generator(&data, task_index, class, store)?;
            }
            Memory::Buffer(buffer) => {
                for &i in idx {
                    buffer.push(task_index, class, task_data.images.row(i).to_vec())?;
                }
            }
            Memory::None => unreachable!(),
        }
    }
    Ok(())
}

/// Descriptive fields copied into every [`RunRecord`].
#[derive(Clone, Debug, PartialEq)]
pub struct RunMeta {
    pub dataset: String,
    pub architecture: String,
}

impl Default for RunMeta {
    fn default() -> Self {
        Self {
            dataset: "unnamed".into(),
            architecture: "mlp".into(),
        }
    }
}

/// Everything a finished run leaves behind.
#[derive(Clone, Debug)]
pub struct RunOutcome<T> {
    pub records: Vec<RunRecord>,
    pub params: MlpParams<T>,
    pub memory: Memory<T>,
}

/// Trains on the tasks in order, evaluating average validation accuracy on
/// all tasks seen so far after every epoch.
pub fn run_sequence<T: Real>(
    config: &StrategyConfig,
    tasks: &TaskSequence<T>,
    meta: &RunMeta,
) -> Result<RunOutcome<T>> {
    config.validate()?;
    let start = Instant::now();
    let mut params = initial_params::<T>(config.seed, &network_dims(config, tasks))?;
    let mut rngs = TrainRngs::from_seed(config.seed);
    let mut memory = new_memory::<T>(config, tasks.num_pixels())?;
    let rule = if config.method.is_er() {
        UpdateRule::Replay
    } else {
        UpdateRule::Agem
    };
    let label = config.label();
    let run_id = format!(
        "{}-{}-{}-seed{}",
        label,
        meta.dataset,
        tasks.protocol.as_str(),
        config.seed
    );

    let mut validation: Vec<Dataset<T>> = Vec::with_capacity(tasks.num_tasks());
    let mut records = Vec::new();
    for k in 0..tasks.num_tasks() {
        let train = tasks.train(k)?;
        validation.push(tasks.validation(k)?);
        for epoch in 0..config.epochs_per_task {
            let stats = train_epoch(
                &mut params,
                &train,
                k,
                tasks.num_classes,
                memory.as_source(),
                rule,
                config,
                &mut rngs,
            )?;
            let (avg, per_task) = avg_validation_accuracy(&params, &validation)?;
            log::info!(
                "{run_id}: task {k} epoch {epoch} loss {:.4} avg acc {avg:.4} ({} projections)",
                stats.mean_loss,
                stats.projections
            );
            records.push(RunRecord {
                run_id: run_id.clone(),
                method: label.clone(),
                dataset: meta.dataset.clone(),
                protocol: tasks.protocol.as_str().to_string(),
                architecture: meta.architecture.clone(),
                seed: config.seed,
                task_index: k,
                epoch,
                avg_val_acc: avg,
                per_task_acc: per_task,
                wall_ms: if config.record_wall_time {
                    start.elapsed().as_millis() as u64
                } else {
                    0
                },
            });
        }
        end_of_task_update(&train, k, config, &mut memory, &mut rngs.memory)?;
    }
    Ok(RunOutcome {
        records,
        params,
        memory,
    })
}

/// Input/hidden/output widths used for a task sequence.
pub fn network_dims<T: Real>(config: &StrategyConfig, tasks: &TaskSequence<T>) -> Vec<usize> {
    let mut dims = vec![tasks.num_pixels()];
    dims.extend_from_slice(&config.hidden_layers);
    dims.push(tasks.num_classes);
    dims
}
