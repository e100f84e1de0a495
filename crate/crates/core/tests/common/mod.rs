#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svd_replay::linalg::DenseMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DenseMatrix<f64> {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn to_na(m: &DenseMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// Singular values of `m` in descending order, from nalgebra.
pub fn oracle_singular_values(m: &DenseMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = to_na(m).svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn workspace_root() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// StoreGenerator written out step by step on top of nalgebra's SVD:
/// `mean = (Σ_v∈Vh v / |Vh|) * S`, `cov = (Covariance(Vh) * S)ᵀ * S` with
/// row-wise broadcasting and population covariance.
/// Returns `(U columns, mean, cov rows)`.
pub fn literal_store_generator(data: &DenseMatrix<f64>, r: usize) -> (Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>) {
    let svd = to_na(data).svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let order = &order[..r];
    let s: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let vh: Vec<Vec<f64>> = order.iter().map(|&i| vt.row(i).iter().copied().collect()).collect();
    let u_cols: Vec<Vec<f64>> = order.iter().map(|&i| u.column(i).iter().copied().collect()).collect();
    let m = data.cols() as f64;

    // mean over the columns of Vh, times S
    let mut mean = vec![0.0; r];
    for i in 0..r {
        let mut sum = 0.0;
        for v in &vh[i] {
            sum += v;
        }
        mean[i] = sum / m * s[i];
    }

    // Covariance(Vh): rows are variables, columns observations
    let mu: Vec<f64> = vh.iter().map(|row| row.iter().sum::<f64>() / m).collect();
    let mut c = vec![vec![0.0; r]; r];
    for i in 0..r {
        for j in 0..r {
            let mut acc = 0.0;
            for t in 0..data.cols() {
                acc += (vh[i][t] - mu[i]) * (vh[j][t] - mu[j]);
            }
            c[i][j] = acc / m;
        }
    }
    // (C * S): S broadcast along the last axis
    let mut cs = vec![vec![0.0; r]; r];
    for i in 0..r {
        for j in 0..r {
            cs[i][j] = c[i][j] * s[j];
        }
    }
    // (C * S)ᵀ * S
    let mut cov = vec![vec![0.0; r]; r];
    for i in 0..r {
        for j in 0..r {
            cov[i][j] = cs[j][i] * s[j];
        }
    }
    (u_cols, mean, cov)
}

/// Largest deviation between a stored record and the literal oracle after
/// aligning the sign of each singular vector.
pub fn oracle_deviation(data: &DenseMatrix<f64>, r: usize) -> f64 {
    use svd_replay::generator::{store_generator, GeneratorStore};
    let mut store = GeneratorStore::new(data.rows(), r).unwrap();
    let rec = store_generator(data, 0, 0, &mut store).unwrap().clone();
    let (u_ref, mean_ref, cov_ref) = literal_store_generator(data, r);
    let sign: Vec<f64> = (0..r)
        .map(|i| {
            let d: f64 = rec.u.column(i).iter().zip(&u_ref[i]).map(|(a, b)| a * b).sum();
            d.signum()
        })
        .collect();
    let mut worst: f64 = 0.0;
    for i in 0..r {
        worst = worst.max((rec.mean[i] - sign[i] * mean_ref[i]).abs());
        for j in 0..r {
            worst = worst.max((rec.cov[(i, j)] - sign[i] * sign[j] * cov_ref[i][j]).abs());
        }
    }
    worst
}

/// Worst relative gap between the analytic gradient and a central finite
/// difference of the loss, over every parameter.
pub fn gradient_check(dims: &[usize], batch_size: usize, seed: u64) -> f64 {
    use svd_replay::nn::{init_params, loss_and_grad, Batch};
    let mut rng = rng(seed);
    let mut params = init_params::<f64>(seed, dims).unwrap();
    let inputs = random_matrix(&mut rng, batch_size, dims[0]);
    let classes = *dims.last().unwrap();
    let labels = (0..batch_size).map(|_| rng.random_range(0..classes)).collect();
    let batch = Batch::new(inputs, labels).unwrap();
    let (_, grad) = loss_and_grad(&params, &batch).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..params.param_count() {
        let orig = params.values()[i];
        params.values_mut()[i] = orig + h;
        let up = loss_and_grad(&params, &batch).unwrap().0;
        params.values_mut()[i] = orig - h;
        let down = loss_and_grad(&params, &batch).unwrap().0;
        params.values_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let analytic = grad.values[i];
        let denom = (numeric.abs() + analytic.abs()).max(1e-7);
        worst = worst.max((numeric - analytic).abs() / denom);
    }
    worst
}

/// Small random MLP shapes for gradient checks.
pub const GRADCHECK_SHAPES: [&[usize]; 5] = [&[3, 4, 2], &[5, 6, 6, 3], &[2, 3], &[4, 8, 5, 4, 2], &[6, 2, 7]];
