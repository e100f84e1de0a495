//! Average validation accuracy, result-table cells, Welch's t-test and the
//! CSV/JSON trace format.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{forward, MlpParams};
use crate::scalar::Real;
use crate::tasks::Dataset;

const EVAL_CHUNK: usize = 1024;

/// One evaluation point of a run. Field order is the CSV column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub method: String,
    pub dataset: String,
    pub protocol: String,
    pub architecture: String,
    pub seed: u64,
    pub task_index: usize,
    pub epoch: usize,
    pub avg_val_acc: f64,
    pub per_task_acc: Vec<f64>,
    pub wall_ms: u64,
}

pub const CSV_HEADER: [&str; 11] = [
    "run_id",
    "method",
    "dataset",
    "protocol",
    "architecture",
    "seed",
    "task_index",
    "epoch",
    "avg_val_acc",
    "per_task_acc",
    "wall_ms",
];

/// Predicted class per row: argmax of the logits, ties to the lowest index.
pub fn predict<T: Real>(params: &MlpParams<T>, inputs: &crate::linalg::DenseMatrix<T>) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(inputs.rows());
    let rows: Vec<usize> = (0..inputs.rows()).collect();
    for chunk in rows.chunks(EVAL_CHUNK) {
        let logits = forward(params, &inputs.select_rows(chunk))?;
        for i in 0..logits.rows() {
            let row = logits.row(i);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = k;
                }
            }
            out.push(best);
        }
    }
    Ok(out)
}

pub fn accuracy<T: Real>(params: &MlpParams<T>, ds: &Dataset<T>) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::arg("accuracy of an empty validation set"));
    }
    let pred = predict(params, &ds.images)?;
    let correct = pred.iter().zip(&ds.labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / ds.len() as f64)
}

/// Mean per-task accuracy over the validation sets of tasks `0..=k`.
///
/// The mean divides by the number of sets evaluated (`k + 1`).
pub fn avg_validation_accuracy<T: Real>(
    params: &MlpParams<T>,
    validation_sets: &[Dataset<T>],
) -> Result<(f64, Vec<f64>)> {
    if validation_sets.is_empty() {
        return Err(Error::arg("no validation sets"));
    }
    let per_task = validation_sets
        .iter()
        .map(|ds| accuracy(params, ds))
        .collect::<Result<Vec<_>>>()?;
    let avg = per_task.iter().sum::<f64>() / per_task.len() as f64;
    Ok((avg, per_task))
}

/// Mean and sample standard deviation across seeds of each seed's average
/// `avg_val_acc` over all of its evaluation points.
pub fn table_cell(records: &[RunRecord]) -> Result<(f64, f64)> {
    let per_seed = per_seed_means(records)?;
    Ok(mean_std(&per_seed))
}

/// Each seed's average of `avg_val_acc` over its trace, in seed order.
pub fn per_seed_means(records: &[RunRecord]) -> Result<Vec<f64>> {
    if records.is_empty() {
        return Err(Error::arg("no records"));
    }
    let mut by_seed: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in records {
        by_seed.entry(r.seed).or_default().push(r.avg_val_acc);
    }
    let len = by_seed.values().next().unwrap().len();
    if let Some((seed, t)) = by_seed.iter().find(|(_, t)| t.len() != len) {
        return Err(Error::arg(format!(
            "seed {seed} has {} evaluation points, expected {len}",
            t.len()
        )));
    }
    Ok(by_seed
        .values()
        .map(|t| t.iter().sum::<f64>() / t.len() as f64)
        .collect())
}

/// `(mean, sample std)`; the std of a single value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Two-sided p-value of Welch's unequal-variance t-test.
///
/// When both samples have zero variance the result is 0 if the means differ
/// and 1 if they are equal.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::arg("Welch's t-test needs at least two values per sample"));
    }
    let (ma, sa) = mean_std(a);
    let (mb, sb) = mean_std(b);
    let va = sa * sa / a.len() as f64;
    let vb = sb * sb / b.len() as f64;
    let se2 = va + vb;
    if se2 == 0.0 {
        return Ok(if ma == mb { 1.0 } else { 0.0 });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (va * va / (a.len() - 1) as f64 + vb * vb / (b.len() - 1) as f64);
    let x = df / (df + t * t);
    Ok(statrs::function::beta::beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0))
}

/// 17 significant digits; parses back to the identical `f64`.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_row(r: &RunRecord) -> [String; 11] {
    [
        r.run_id.clone(),
        r.method.clone(),
        r.dataset.clone(),
        r.protocol.clone(),
        r.architecture.clone(),
        r.seed.to_string(),
        r.task_index.to_string(),
        r.epoch.to_string(),
        format_real(r.avg_val_acc),
        r.per_task_acc
            .iter()
            .map(|&v| format_real(v))
            .collect::<Vec<_>>()
            .join(";"),
        r.wall_ms.to_string(),
    ]
}

pub fn records_to_csv(records: &[RunRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record(csv_row(r))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Argument(format!("csv flush failed: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn records_to_json(records: &[RunRecord]) -> String {
    if records.is_empty() {
        return "[]\n".to_string();
    }
    let q = |s: &str| serde_json::to_string(s).expect("string serializes");
    let mut out = String::from("[\n");
    for (i, r) in records.iter().enumerate() {
        let per_task = r
            .per_task_acc
            .iter()
            .map(|&v| format_real(v))
            .collect::<Vec<_>>()
            .join(", ");
        out.push_str(&format!(
            "  {{\"run_id\": {}, \"method\": {}, \"dataset\": {}, \"protocol\": {}, \"architecture\": {}, \
             \"seed\": {}, \"task_index\": {}, \"epoch\": {}, \"avg_val_acc\": {}, \"per_task_acc\": [{}], \"wall_ms\": {}}}",
            q(&r.run_id),
            q(&r.method),
            q(&r.dataset),
            q(&r.protocol),
            q(&r.architecture),
            r.seed,
            r.task_index,
            r.epoch,
            format_real(r.avg_val_acc),
            per_task,
            r.wall_ms
        ));
        out.push_str(if i + 1 < records.len() { ",\n" } else { "\n" });
    }
    out.push_str("]\n");
    out
}

/// Writes the CSV (header always present) and JSON array for `records`.
pub fn emit(records: &[RunRecord], csv_path: impl AsRef<Path>, json_path: impl AsRef<Path>) -> Result<()> {
    let (cp, jp) = (csv_path.as_ref(), json_path.as_ref());
    fs::write(cp, records_to_csv(records)?).map_err(|e| Error::io(cp, e))?;
    fs::write(jp, records_to_json(records)).map_err(|e| Error::io(jp, e))
}

pub fn parse_csv(text: &str) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::format(0, "unexpected CSV header"));
    }
    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        let bad = |what: &str| Error::format(row.position().map_or(0, |p| p.byte()), format!("row {}: bad {what}", line + 1));
        let num = |i: usize, what: &str| -> Result<u64> { row[i].parse().map_err(|_| bad(what)) };
        let per_task_acc = if row[9].is_empty() {
            Vec::new()
        } else {
            row[9]
                .split(';')
                .map(|v| v.parse::<f64>().map_err(|_| bad("per_task_acc")))
                .collect::<Result<Vec<_>>>()?
        };
        out.push(RunRecord {
            run_id: row[0].to_string(),
            method: row[1].to_string(),
            dataset: row[2].to_string(),
            protocol: row[3].to_string(),
            architecture: row[4].to_string(),
            seed: num(5, "seed")?,
            task_index: num(6, "task_index")? as usize,
            epoch: num(7, "epoch")? as usize,
            avg_val_acc: row[8].parse().map_err(|_| bad("avg_val_acc"))?,
            per_task_acc,
            wall_ms: num(10, "wall_ms")?,
        });
    }
    Ok(out)
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let path = path.as_ref();
    parse_csv(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn read_json(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(0, e.to_string()))
}
