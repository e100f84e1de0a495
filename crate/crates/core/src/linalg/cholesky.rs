use super::DenseMatrix;
use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// Relative jitter levels tried, in order, when the plain factorization fails.
/// Each level adds `eps * trace(c) / r` to the diagonal.
pub const JITTER_SCHEDULE: [f64; 7] = [1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

const SYMMETRY_TOL: f64 = 1e-10;

/// Lower-triangular `L` with `L·Lᵀ ≈ c` for a symmetric positive-semidefinite `c`.
///
/// A pivot that is exactly zero with an exactly zero remainder column is
/// accepted (the column of `L` is zero), so covariances of constant data
/// factor to the zero matrix. Anything else that fails retries with
/// escalating diagonal jitter from [`JITTER_SCHEDULE`].
pub fn cholesky_psd<T: Real>(c: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    let (r, cols) = c.shape();
    if r != cols {
        return Err(Error::arg(format!("covariance must be square, got {r}x{cols}")));
    }
    if !c.is_finite() {
        return Err(Error::arg("covariance contains non-finite entries"));
    }
    let scale = c.max_abs();
    for i in 0..r {
        for j in 0..i {
            if (c[(i, j)] - c[(j, i)]).abs() > lit::<T>(SYMMETRY_TOL) * scale {
                return Err(Error::arg(format!(
                    "covariance is not symmetric at ({i}, {j})"
                )));
            }
        }
    }

    let mut failed_at = match factor(c, T::zero()) {
        Ok(l) => return Ok(l),
        Err(minor) => minor,
    };
    let base = c.trace() / lit(r.max(1) as f64);
    for eps in JITTER_SCHEDULE {
        let shift = lit::<T>(eps) * base;
        match factor(c, shift) {
            Ok(l) => {
                log::debug!("cholesky_psd succeeded with jitter {eps:e}");
                return Ok(l);
            }
            Err(minor) => failed_at = minor,
        }
    }
    Err(Error::Numeric(format!(
        "covariance not positive semidefinite: leading minor {} fails after maximum jitter",
        failed_at + 1
    )))
}

/// Factors `c + shift·I`; on failure returns the zero-based index of the
/// offending leading minor.
fn factor<T: Real>(c: &DenseMatrix<T>, shift: T) -> std::result::Result<DenseMatrix<T>, usize> {
    let r = c.rows();
    let mut l = DenseMatrix::<T>::zeros(r, r);
    for j in 0..r {
        let mut d = c[(j, j)] + shift;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d > T::zero() && d.is_finite() {
            let ljj = d.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..r {
                let mut v = c[(i, j)];
                for k in 0..j {
                    v -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = v / ljj;
            }
        } else if d == T::zero() {
            for i in (j + 1)..r {
                let mut v = c[(i, j)];
                for k in 0..j {
                    v -= l[(i, k)] * l[(j, k)];
                }
                if v != T::zero() {
                    return Err(j);
                }
            }
        } else {
            return Err(j);
        }
    }
    Ok(l)
}
