use rand::Rng;
use rand_distr::StandardNormal;

use super::{cholesky_psd, DenseMatrix};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// One draw from `N(mean, cov)` as `mean + L·z`, `L = cholesky_psd(cov)`.
///
/// Exactly `mean.len()` standard normals are consumed from `rng` per call.
pub fn sample_mvn<T: Real, R: Rng + ?Sized>(
    mean: &[T],
    cov: &DenseMatrix<T>,
    rng: &mut R,
) -> Result<Vec<T>> {
    if cov.shape() != (mean.len(), mean.len()) {
        return Err(Error::arg(format!(
            "mean has length {} but covariance is {:?}",
            mean.len(),
            cov.shape()
        )));
    }
    let l = cholesky_psd(cov)?;
    Ok(sample_with_factor(mean, &l, rng))
}

pub(crate) fn sample_with_factor<T: Real, R: Rng + ?Sized>(
    mean: &[T],
    l: &DenseMatrix<T>,
    rng: &mut R,
) -> Vec<T> {
    let z: Vec<T> = (0..mean.len())
        .map(|_| T::from_f64_lossy(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    mean.iter()
        .enumerate()
        .map(|(i, &m)| {
            let lz: T = l.row(i)[..=i].iter().zip(&z).map(|(&a, &b)| a * b).sum();
            m + lz
        })
        .collect()
}
