//! Command implementations behind the `svd-replay` binary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, Precision, CONFIG_ECHO_FILE};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::generator::{generate_sample, load_store, save_store, GeneratorStore};
use crate::metrics::{self, mean_std, per_seed_means, welch_t_test, RunRecord};
use crate::strategies::{run_sequence, RunMeta};
use crate::tasks::{
    build_class_split_tasks, build_rotation_tasks, load_idx, synthetic_dataset, Dataset, Protocol,
    TaskSequence,
};

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Significance level below which a method counts as worse than the best.
pub const BOLD_P_THRESHOLD: f64 = 0.01;

/// Process exit code for an error: 2 for configuration problems, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        _ => 1,
    }
}

pub fn trace_csv_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("trace_seed{seed}.csv"))
}

pub fn trace_json_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("trace_seed{seed}.json"))
}

pub fn generator_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("generator_seed{seed}.svdg"))
}

/// Source dataset named by the config, before task construction.
pub fn load_source<T: Real>(cfg: &ExperimentConfig) -> Result<Dataset<T>> {
    let ds = if cfg.is_synthetic() {
        synthetic_dataset(cfg.split_seed, cfg.synthetic_samples, cfg.synthetic_pixels, 10)?
    } else {
        let dir = cfg
            .resolved_data_dir()
            .ok_or_else(|| Error::Config("data_dir missing".into()))?;
        load_idx(dir.join(TRAIN_IMAGES), dir.join(TRAIN_LABELS))?
    };
    Ok(match cfg.train_limit {
        Some(n) if n < ds.len() => ds.subset(&(0..n).collect::<Vec<_>>()),
        _ => ds,
    })
}

pub fn build_tasks<T: Real>(cfg: &ExperimentConfig, source: &Dataset<T>) -> Result<TaskSequence<T>> {
    match cfg.protocol {
        Protocol::Rotation => build_rotation_tasks(source, cfg.val_fraction, cfg.split_seed),
        Protocol::ClassSplit => build_class_split_tasks(source, cfg.val_fraction, cfg.split_seed),
    }
}

/// Runs every seed of the experiment and writes traces, generator stores
/// and a summary into `output_dir`. Each seed's files are written as soon as
/// that seed finishes.
pub fn cmd_run(config_path: &Path) -> Result<Vec<RunRecord>> {
    let cfg = ExperimentConfig::load(config_path)?;
    match cfg.precision {
        Precision::F32 => run_experiment::<f32>(&cfg),
        Precision::F64 => run_experiment::<f64>(&cfg),
    }
}

fn run_experiment<T: Real>(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    let source = load_source::<T>(cfg)?;
    let tasks = build_tasks(cfg, &source)?;
    drop(source);

    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let echo = out.join(CONFIG_ECHO_FILE);
    fs::write(&echo, cfg.to_toml()).map_err(|e| Error::io(&echo, e))?;

    let meta = RunMeta {
        dataset: cfg.dataset.clone(),
        ..RunMeta::default()
    };
    let mut all = Vec::new();
    for &seed in &cfg.seeds {
        log::info!("seed {seed}: starting {}", cfg.strategy(seed).label());
        let outcome = run_sequence(&cfg.strategy(seed), &tasks, &meta)?;
        metrics::emit(
            &outcome.records,
            trace_csv_path(out, seed),
            trace_json_path(out, seed),
        )?;
        if let Some(store) = outcome.memory.generators() {
            save_store(store, generator_path(out, seed))?;
        }
        all.extend(outcome.records);
    }
    let summary = summarize(&all)?;
    let path = out.join(SUMMARY_FILE);
    fs::write(&path, summary_csv(&summary)).map_err(|e| Error::io(&path, e))?;
    Ok(all)
}

/// One row of a results table.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub dataset: String,
    pub protocol: String,
    /// Per-seed averages over each trace.
    pub seed_values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Best, or not significantly worse than the best.
    pub bold: bool,
}

/// Groups records by method and marks the significant best.
///
/// The method with the highest mean is bold, and so is every method whose
/// Welch p-value against it is at least [`BOLD_P_THRESHOLD`].
pub fn summarize(records: &[RunRecord]) -> Result<Vec<MethodSummary>> {
    let mut groups: BTreeMap<&str, Vec<RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(&r.method).or_default().push(r.clone());
    }
    let mut rows = Vec::new();
    for (method, recs) in groups {
        let seed_values = per_seed_means(&recs)?;
        let (mean, std) = mean_std(&seed_values);
        rows.push(MethodSummary {
            method: method.to_string(),
            dataset: recs[0].dataset.clone(),
            protocol: recs[0].protocol.clone(),
            seed_values,
            mean,
            std,
            bold: false,
        });
    }
    let Some(best) = rows
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.mean.total_cmp(&b.1.mean).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
    else {
        return Ok(rows);
    };
    let best_values = rows[best].seed_values.clone();
    let best_mean = rows[best].mean;
    for (i, row) in rows.iter_mut().enumerate() {
        row.bold = if i == best {
            true
        } else if row.seed_values.len() < 2 || best_values.len() < 2 {
            row.mean == best_mean
        } else {
            welch_t_test(&best_values, &row.seed_values)? >= BOLD_P_THRESHOLD
        };
    }
    Ok(rows)
}

pub fn summary_csv(rows: &[MethodSummary]) -> String {
    let mut s = String::from("method,dataset,protocol,seeds,mean,std,bold\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.method,
            r.dataset,
            r.protocol,
            r.seed_values.len(),
            metrics::format_real(r.mean),
            metrics::format_real(r.std),
            r.bold
        );
    }
    s
}

/// Human-readable table; bold entries are wrapped in `**`.
pub fn format_table(rows: &[MethodSummary]) -> String {
    let width = rows.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
    let mut s = format!("{:<width$}  {:>5}  {}\n", "method", "seeds", "mean ± std");
    for r in rows {
        let cell = format!("{:.3} ± {:.3}", r.mean, r.std);
        let cell = if r.bold { format!("**{cell}**") } else { cell };
        let _ = writeln!(s, "{:<width$}  {:>5}  {cell}", r.method, r.seed_values.len());
    }
    s
}

/// Reads every `trace_seed*.csv` in `dir`, in file-name order.
pub fn read_traces(dir: &Path) -> Result<Vec<RunRecord>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("trace_seed") && name.ends_with(".csv") {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(Error::arg(format!("no trace_seed*.csv files in {}", dir.display())));
    }
    paths.sort();
    let mut records = Vec::new();
    for p in paths {
        records.extend(metrics::read_csv(&p)?);
    }
    Ok(records)
}

/// Loads the traces in `dirs` and builds the comparison table.
pub fn cmd_compare(dirs: &[PathBuf]) -> Result<Vec<MethodSummary>> {
    if dirs.is_empty() {
        return Err(Error::arg("compare needs at least one directory"));
    }
    let mut records = Vec::new();
    for d in dirs {
        records.extend(read_traces(d)?);
    }
    let protocol = &records[0].protocol;
    if let Some(other) = records.iter().find(|r| &r.protocol != protocol) {
        return Err(Error::arg(format!(
            "cannot compare protocols {protocol:?} and {:?}",
            other.protocol
        )));
    }
    summarize(&records)
}

/// Tile layout of a flattened image with `num_pixels` entries:
/// `(height, width, channels)`.
pub fn infer_image_shape(num_pixels: usize) -> Result<(usize, usize, usize)> {
    let side = |n: usize| {
        let s = (n as f64).sqrt().round() as usize;
        (s * s == n && n > 0).then_some(s)
    };
    if let Some(s) = side(num_pixels) {
        return Ok((s, s, 1));
    }
    if num_pixels % 3 == 0 {
        if let Some(s) = side(num_pixels / 3) {
            return Ok((s, s, 3));
        }
    }
    Err(Error::arg(format!(
        "cannot lay out {num_pixels} values as a square 1- or 3-channel image"
    )))
}

/// Binary PGM (`P5`) for one channel or PPM (`P6`) for three.
/// `pixels` is interleaved row-major.
pub fn encode_pnm(width: usize, height: usize, channels: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    let magic = match channels {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::arg(format!("unsupported channel count {c}"))),
    };
    if pixels.len() != width * height * channels {
        return Err(Error::arg("pixel buffer does not match image size"));
    }
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

fn tile_bytes(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}

/// Image grid of one generator: the first row holds the `r` columns of `U`,
/// the second `count` generated samples. Every tile is min-max scaled on
/// its own.
pub fn generator_grid(
    store: &GeneratorStore<f64>,
    task: usize,
    class: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<u8>> {
    let record = store
        .get(task, class)
        .ok_or(Error::MissingRecord { task, class })?;
    let (h, w, ch) = infer_image_shape(store.num_pixels())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<Vec<f64>>> = vec![Vec::new(), Vec::new()];
    for j in 0..record.rank() {
        rows[0].push(record.u.column(j));
    }
    for _ in 0..count {
        rows[1].push(generate_sample(store, task, class, &mut rng)?.0);
    }
    let cols = record.rank().max(count).max(1);
    let (gw, gh) = (cols * w, 2 * h);
    let mut pixels = vec![0u8; gw * gh * ch];
    for (ri, row) in rows.iter().enumerate() {
        for (ci, tile) in row.iter().enumerate() {
            // stored planar (channel, y, x); PNM wants interleaved
            let bytes = tile_bytes(tile);
            for c in 0..ch {
                for y in 0..h {
                    for x in 0..w {
                        let gy = ri * h + y;
                        let gx = ci * w + x;
                        pixels[(gy * gw + gx) * ch + c] = bytes[(c * h + y) * w + x];
                    }
                }
            }
        }
    }
    encode_pnm(gw, gh, ch, &pixels)
}

pub fn cmd_inspect_generator(
    store_path: &Path,
    task: usize,
    class: usize,
    count: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let store = load_store::<f64>(store_path)?;
    let image = generator_grid(&store, task, class, count, seed)?;
    fs::write(out, image).map_err(|e| Error::io(out, e))
}
