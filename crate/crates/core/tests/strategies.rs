mod common;

use std::cell::RefCell;

use common::*;
use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use svd_replay::generator::{generate_sample, GeneratorStore, RECORD_HEADER_BYTES, STORE_HEADER_BYTES};
use svd_replay::linalg::dot;
use svd_replay::nn::{loss_and_grad, sgd_step, GradientVector, Layout};
use svd_replay::strategies::{
    agem_project, assemble_reference_batch, end_of_task_update, initial_params, new_memory, run_sequence,
    train_epoch, train_task_agem, train_task_er, Memory, Method, ReferenceSource, ReplayBuffer, RunMeta,
    StrategyConfig, TrainRngs, UpdateRule,
};
use svd_replay::tasks::{build_class_split_tasks, rotate_dataset, synthetic_dataset, Dataset};
use svd_replay::Result;

fn toy_config(method: Method) -> StrategyConfig {
    StrategyConfig {
        method,
        samples_per_task: 60,
        rank: 3,
        learning_rate: 0.1,
        batch_size: 16,
        hidden_layers: vec![12],
        seed: 9,
        ..Default::default()
    }
}

fn toy_data(seed: u64) -> Dataset<f64> {
    synthetic_dataset(seed, 200, 16, 4).unwrap()
}

#[test]
fn projection_examples() {
    let gv = |v: &[f64]| GradientVector {
        layout: Layout::new(vec![1, 1]).unwrap(),
        values: v.to_vec(),
    };
    assert_eq!(agem_project(&gv(&[1.0, 0.0]), &gv(&[1.0, 0.0])).unwrap().values, [1.0, 0.0]);
    let p = agem_project(&gv(&[1.0, -1.0]), &gv(&[0.0, 1.0])).unwrap();
    assert_eq!(p.values, [1.0, 0.0]);
    assert_eq!(dot(&p.values, &[0.0, 1.0]), 0.0);
    assert_eq!(agem_project(&gv(&[-2.0, 0.0]), &gv(&[1.0, 0.0])).unwrap().values, [0.0, 0.0]);
}

#[test]
fn single_cell_batches() {
    let mut buf = ReplayBuffer::new(3, 5);
    buf.push(0, 0, vec![0.1, 0.2, 0.3]).unwrap();
    let b = assemble_reference_batch(&buf, 8, 1, 1, 3, &mut rng(1)).unwrap();
    assert_eq!(b.labels, vec![0; 8]);
    assert!(b.inputs.as_slice().chunks(3).all(|r| r == [0.1, 0.2, 0.3]));
}

#[test]
fn reference_cells_are_uniform() {
    let mut buf = ReplayBuffer::new(1, 4);
    for task in 0..2 {
        for class in 0..2 {
            buf.push(task, class, vec![(task * 2 + class) as f64]).unwrap();
        }
    }
    let b = assemble_reference_batch(&buf, 10_000, 2, 2, 1, &mut rng(2)).unwrap();
    let mut counts = [0usize; 4];
    for (x, &y) in b.inputs.as_slice().iter().zip(&b.labels) {
        assert_eq!(*x as usize % 2, y);
        counts[*x as usize] += 1;
    }
    for c in counts {
        assert!((2350..=2650).contains(&c), "{counts:?}");
    }
}

#[test]
fn missing_class_is_redrawn_then_reported() {
    let mut buf = ReplayBuffer::new(1, 4);
    buf.push(0, 1, vec![1.0]).unwrap();
    let b = assemble_reference_batch(&buf, 50, 1, 3, 1, &mut rng(3));
    // with three classes and one populated cell most draws need redraws;
    // some exhaust the budget
    match b {
        Ok(b) => assert!(b.labels.iter().all(|&y| y == 1)),
        Err(e) => assert!(matches!(e, svd_replay::Error::MissingRecord { .. })),
    }
    let empty = ReplayBuffer::<f64>::new(1, 4);
    assert!(assemble_reference_batch(&empty, 1, 1, 2, 1, &mut rng(3)).is_err());
}

#[test]
fn end_of_task_sampling() {
    let ds = synthetic_dataset::<f64>(4, 6000, 16, 10).unwrap();
    let cfg = StrategyConfig {
        method: Method::AgemRaw,
        samples_per_task: 1000,
        ..Default::default()
    };
    let mut mem = new_memory(&cfg, 16).unwrap();
    end_of_task_update(&ds, 0, &cfg, &mut mem, &mut rng(5)).unwrap();
    let buf = mem.buffer().unwrap();
    assert_eq!(buf.task_total(0), 1000);
    for class in 0..10 {
        let n = buf.samples(0, class).len();
        assert!((70..=130).contains(&n), "class {class}: {n}");
    }

    // budget of 51 grows the buffer by exactly 51 per task
    let cfg51 = StrategyConfig {
        samples_per_task: 51,
        ..cfg.clone()
    };
    let mut mem = new_memory(&cfg51, 16).unwrap();
    end_of_task_update(&ds, 0, &cfg51, &mut mem, &mut rng(6)).unwrap();
    assert_eq!(mem.buffer().unwrap().total(), 51);
    end_of_task_update(&ds, 1, &cfg51, &mut mem, &mut rng(6)).unwrap();
    assert_eq!(mem.buffer().unwrap().total(), 102);
}

#[test]
fn sampling_everything_reproduces_the_class_partition() {
    let ds = synthetic_dataset::<f64>(4, 90, 9, 3).unwrap();
    let cfg = StrategyConfig {
        method: Method::ErRaw,
        samples_per_task: 500,
        ..Default::default()
    };
    let mut mem = new_memory(&cfg, 9).unwrap();
    // more than available: clamped
    end_of_task_update(&ds, 0, &cfg, &mut mem, &mut rng(7)).unwrap();
    let buf = mem.buffer().unwrap();
    for class in 0..3 {
        let mut stored: Vec<Vec<f64>> = buf.samples(0, class).to_vec();
        let mut expected: Vec<Vec<f64>> = (0..90)
            .filter(|&i| ds.labels[i] == class)
            .map(|i| ds.images.row(i).to_vec())
            .collect();
        stored.sort_by(|a, b| a.partial_cmp(b).unwrap());
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(stored, expected);
    }
}

#[test]
fn generator_memory_holds_only_generators() {
    let ds = toy_data(8);
    let cfg = toy_config(Method::AgemGen);
    let mut mem = new_memory(&cfg, 16).unwrap();
    for k in 0..3 {
        end_of_task_update(&ds, k, &cfg, &mut mem, &mut rng(k as u64)).unwrap();
    }
    let Memory::Generators(store) = &mem else {
        panic!("expected generator memory")
    };
    assert_eq!(store.len(), 12);
    let per_record = RECORD_HEADER_BYTES + (16 * 3 + 9 + 3) * 8;
    assert_eq!(store.serialized_len(), STORE_HEADER_BYTES + 12 * per_record);
}

fn run_tasks(cfg: &StrategyConfig, tasks: &[Dataset<f64>], rule: UpdateRule) -> Vec<f64> {
    let dims = [16, 12, 4];
    let mut params = initial_params::<f64>(cfg.seed, &dims).unwrap();
    let mut rngs = TrainRngs::from_seed(cfg.seed);
    let mut mem = new_memory(cfg, 16).unwrap();
    for (k, t) in tasks.iter().enumerate() {
        train_epoch(&mut params, t, k, 4, mem.as_source(), rule, cfg, &mut rngs).unwrap();
        end_of_task_update(t, k, cfg, &mut mem, &mut rngs.memory).unwrap();
    }
    params.values().to_vec()
}

#[test]
fn first_task_is_plain_sgd() {
    let t = [toy_data(1)];
    let sgd = run_tasks(&toy_config(Method::Sgd), &t, UpdateRule::Agem);
    for m in [Method::AgemRaw, Method::AgemGen] {
        assert_eq!(run_tasks(&toy_config(m), &t, UpdateRule::Agem), sgd);
    }
    for m in [Method::ErRaw, Method::ErGen] {
        assert_eq!(run_tasks(&toy_config(m), &t, UpdateRule::Replay), sgd);
    }
}

#[test]
fn replay_with_empty_memory_is_plain_sgd() {
    let t = [toy_data(1), rotate_dataset(&toy_data(2), 90.0).unwrap()];
    let sgd = run_tasks(&toy_config(Method::Sgd), &t, UpdateRule::Replay);
    let cfg = StrategyConfig {
        reference_batch_size: Some(0),
        ..toy_config(Method::ErRaw)
    };
    assert_eq!(run_tasks(&cfg, &t, UpdateRule::Replay), sgd);
    let with_memory = run_tasks(&toy_config(Method::ErRaw), &t, UpdateRule::Replay);
    assert_ne!(with_memory, sgd);
}

#[test]
fn aligned_reference_leaves_the_trajectory_unchanged() {
    // reference batch = current batch, so g·g_ref = ‖g‖² ≥ 0 every step
    let data = toy_data(3);
    let mut a = initial_params::<f64>(1, &[16, 12, 4]).unwrap();
    let mut b = a.clone();
    for chunk in (0..data.len()).collect::<Vec<_>>().chunks(16) {
        let batch = data.batch(chunk);
        let (_, g) = loss_and_grad(&a, &batch).unwrap();
        sgd_step(&mut a, &g, 0.1).unwrap();
        let (_, g) = loss_and_grad(&b, &batch).unwrap();
        let (_, g_ref) = loss_and_grad(&b, &batch).unwrap();
        sgd_step(&mut b, &agem_project(&g, &g_ref).unwrap(), 0.1).unwrap();
    }
    assert_eq!(a.values(), b.values());
}

#[test]
fn combined_replay_loss_is_the_weighted_mean() {
    let data = toy_data(4);
    let params = initial_params::<f64>(2, &[16, 12, 4]).unwrap();
    let t = data.batch(&(0..24).collect::<Vec<_>>());
    let m = data.batch(&(100..111).collect::<Vec<_>>());
    let (lt, _) = loss_and_grad(&params, &t).unwrap();
    let (lm, _) = loss_and_grad(&params, &m).unwrap();
    let (lc, _) = loss_and_grad(&params, &t.concat(&m).unwrap()).unwrap();
    let expected = (24.0 * lt + 11.0 * lm) / 35.0;
    assert!((lc - expected).abs() < 1e-12);
}

/// Generator-backed source that logs every sample it hands out.
struct Recording {
    store: GeneratorStore<f64>,
    rng: RefCell<ChaCha8Rng>,
    log: RefCell<Vec<Vec<f64>>>,
}

impl ReferenceSource<f64> for Recording {
    fn contains(&self, task: usize, class: usize) -> bool {
        self.store.get(task, class).is_some()
    }

    fn draw(&self, task: usize, class: usize, _rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let x = generate_sample(&self.store, task, class, &mut *self.rng.borrow_mut())?.0;
        self.log.borrow_mut().push(x.clone());
        Ok(x)
    }
}

/// Raw source that replays a fixed list of samples in order.
struct Replaying {
    samples: Vec<Vec<f64>>,
    next: RefCell<usize>,
}

impl ReferenceSource<f64> for Replaying {
    fn contains(&self, _: usize, _: usize) -> bool {
        true
    }

    fn draw(&self, _: usize, _: usize, _rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let mut i = self.next.borrow_mut();
        *i += 1;
        Ok(self.samples[*i - 1].clone())
    }
}

#[test]
fn raw_and_generator_sources_share_the_training_path() {
    let t0 = toy_data(5);
    let t1 = rotate_dataset(&toy_data(6), 90.0).unwrap();
    let cfg = toy_config(Method::AgemGen);
    let mut mem = new_memory(&cfg, 16).unwrap();
    end_of_task_update(&t0, 0, &cfg, &mut mem, &mut rng(1)).unwrap();
    let Memory::Generators(store) = mem else { unreachable!() };
    let recording = Recording {
        store,
        rng: RefCell::new(rng(2)),
        log: RefCell::new(Vec::new()),
    };
    let start = initial_params::<f64>(3, &[16, 12, 4]).unwrap();

    let mut a = start.clone();
    let mut rngs = TrainRngs::from_seed(4);
    train_task_agem(&mut a, &t1, 1, Some(&recording), &cfg, &mut rngs).unwrap();

    let replay = Replaying {
        samples: recording.log.into_inner(),
        next: RefCell::new(0),
    };
    let mut b = start.clone();
    let mut rngs = TrainRngs::from_seed(4);
    train_task_agem(&mut b, &t1, 1, Some(&replay), &cfg, &mut rngs).unwrap();
    assert_eq!(a.values(), b.values());
}

#[test]
fn generator_memory_reduces_forgetting_on_a_toy_problem() {
    let t0 = toy_data(10);
    let t1 = rotate_dataset(&toy_data(11), 90.0).unwrap();
    let task0 = t0.as_batch();
    let mut losses = Vec::new();
    for method in [Method::Sgd, Method::AgemGen, Method::ErGen] {
        let cfg = toy_config(method);
        let mut params = initial_params::<f64>(cfg.seed, &[16, 12, 4]).unwrap();
        let mut rngs = TrainRngs::from_seed(cfg.seed);
        let mut mem = new_memory(&cfg, 16).unwrap();
        let train = if method.is_er() { train_task_er } else { train_task_agem };
        for (k, t) in [&t0, &t1].into_iter().enumerate() {
            for _ in 0..5 {
                train(&mut params, t, k, mem.as_source(), &cfg, &mut rngs).unwrap();
            }
            end_of_task_update(t, k, &cfg, &mut mem, &mut rngs.memory).unwrap();
        }
        losses.push(loss_and_grad(&params, &task0).unwrap().0);
    }
    assert!(losses[1] <= losses[0], "{losses:?}");
    assert!(losses[2] <= losses[0], "{losses:?}");
}

#[test]
fn projection_never_conflicts_during_training() {
    let t0 = toy_data(12);
    let t1 = rotate_dataset(&toy_data(13), 90.0).unwrap();
    let cfg = toy_config(Method::AgemRaw);
    let mut params = initial_params::<f64>(1, &[16, 12, 4]).unwrap();
    let mut rngs = TrainRngs::from_seed(1);
    let mut mem = new_memory(&cfg, 16).unwrap();
    train_epoch(&mut params, &t0, 0, 4, None, UpdateRule::Agem, &cfg, &mut rngs).unwrap();
    end_of_task_update(&t0, 0, &cfg, &mut mem, &mut rngs.memory).unwrap();
    let stats = train_epoch(&mut params, &t1, 1, 4, mem.as_source(), UpdateRule::Agem, &cfg, &mut rngs).unwrap();
    assert!(stats.projections > 0);
    assert!(stats.max_projected_cosine <= 1e-10, "{}", stats.max_projected_cosine);
}

#[test]
fn runs_are_deterministic_and_one_task_training_works() {
    let ds = synthetic_dataset::<f64>(1, 2000, 16, 10).unwrap();
    let tasks = build_class_split_tasks(&ds, 0.2, 0).unwrap();
    let cfg = StrategyConfig {
        method: Method::ErGen,
        samples_per_task: 40,
        rank: 2,
        batch_size: 8,
        learning_rate: 0.5,
        hidden_layers: vec![10],
        ..Default::default()
    };
    let meta = RunMeta::default();
    let a = run_sequence(&cfg, &tasks, &meta).unwrap();
    let b = run_sequence(&cfg, &tasks, &meta).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.params, b.params);
    assert_eq!(a.records.len(), 10);
    assert_eq!(a.records[0].per_task_acc.len(), 1);
    assert_eq!(a.records[9].per_task_acc.len(), 10);
    // the first task is learnable from one epoch
    assert!(a.records[0].avg_val_acc > 0.9, "{}", a.records[0].avg_val_acc);
}
