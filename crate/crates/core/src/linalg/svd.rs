use super::{dot, norm, DenseMatrix};
use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

const MAX_SWEEPS: usize = 80;

/// Leading `r` singular triples of a matrix: `a ≈ u · diag(s) · vt`.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedFactors<T> {
    /// `P x r`, orthonormal columns.
    pub u: DenseMatrix<T>,
    /// Non-increasing, non-negative.
    pub s: Vec<T>,
    /// `r x n`, orthonormal rows.
    pub vt: DenseMatrix<T>,
}

impl<T: Real> TruncatedFactors<T> {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `u · diag(s) · vt`.
    pub fn reconstruct(&self) -> DenseMatrix<T> {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (v, &s) in us.row_mut(i).iter_mut().zip(&self.s) {
                *v *= s;
            }
        }
        us.matmul(&self.vt).expect("factor shapes are consistent")
    }
}

/// Rank-`rank` truncated SVD via one-sided (Hestenes) Jacobi.
///
/// The rotations orthogonalize the columns of `a` (or its rows, whichever set
/// is smaller), which diagonalizes the smaller Gram matrix implicitly without
/// squaring the condition number. The sign of every singular pair is fixed so
/// that the largest-magnitude entry of each `u` column is positive.
pub fn truncated_svd<T: Real>(a: &DenseMatrix<T>, rank: usize) -> Result<TruncatedFactors<T>> {
    let (p, n) = a.shape();
    if rank == 0 || rank > p.min(n) {
        return Err(Error::arg(format!(
            "rank {rank} outside 1..={} for a {p}x{n} matrix",
            p.min(n)
        )));
    }
    if !a.is_finite() {
        return Err(Error::arg("matrix contains non-finite entries"));
    }

    // Rows of `work` are the vectors being orthogonalized.
    let columns_side = n <= p;
    let mut work = if columns_side { a.transpose() } else { a.clone() };
    let k = work.rows();
    let mut rot = DenseMatrix::<T>::identity(k);
    one_sided_jacobi(&mut work, &mut rot)?;

    let sigma: Vec<T> = (0..k).map(|i| norm(work.row(i))).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| sigma[j].partial_cmp(&sigma[i]).unwrap().then(i.cmp(&j)));
    order.truncate(rank);

    let s: Vec<T> = order.iter().map(|&i| sigma[i]).collect();
    let smax = s[0];
    let cutoff = smax * T::epsilon();
    let mut scaled: Vec<Vec<T>> = Vec::with_capacity(rank);
    let mut degenerate = Vec::with_capacity(rank);
    for (&i, &si) in order.iter().zip(&s) {
        if si > cutoff && si > T::zero() {
            scaled.push(work.row(i).iter().map(|&v| v / si).collect());
            degenerate.push(false);
        } else {
            scaled.push(vec![T::zero(); work.cols()]);
            degenerate.push(true);
        }
    }
    complete_orthonormal_columns(&mut scaled, &degenerate);
    let rotated: Vec<Vec<T>> = order.iter().map(|&i| rot.row(i).to_vec()).collect();

    let (mut u_cols, mut vt_rows) = if columns_side {
        (scaled, rotated)
    } else {
        (rotated, scaled)
    };
    for (uc, vr) in u_cols.iter_mut().zip(vt_rows.iter_mut()) {
        let pivot = uc
            .iter()
            .enumerate()
            .fold((0usize, T::zero()), |(bi, bv), (i, &v)| {
                if v.abs() > bv {
                    (i, v.abs())
                } else {
                    (bi, bv)
                }
            })
            .0;
        if uc[pivot] < T::zero() {
            uc.iter_mut().for_each(|v| *v = -*v);
            vr.iter_mut().for_each(|v| *v = -*v);
        }
    }

    Ok(TruncatedFactors {
        u: DenseMatrix::from_columns(&u_cols)?,
        s,
        vt: DenseMatrix::from_rows(&vt_rows)?,
    })
}

/// Orthogonalizes the rows of `work` in place, applying the same plane
/// rotations to the rows of `rot`.
fn one_sided_jacobi<T: Real>(work: &mut DenseMatrix<T>, rot: &mut DenseMatrix<T>) -> Result<()> {
    let k = work.rows();
    let len = work.cols();
    let tol = T::epsilon() * lit::<T>(k.max(2) as f64);
    // rotations preserve the total energy; vectors below eps² of it are
    // rounding residue and would otherwise keep the sweep from settling
    let total: T = work.as_slice().iter().map(|&v| v * v).sum();
    let negligible = total * T::epsilon() * T::epsilon();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..k.saturating_sub(1) {
            for j in (i + 1)..k {
                let (alpha, beta, gamma) = {
                    let (wi, wj) = (work.row(i), work.row(j));
                    let mut acc = (T::zero(), T::zero(), T::zero());
                    for (&x, &y) in wi.iter().zip(wj) {
                        acc.0 += x * x;
                        acc.1 += y * y;
                        acc.2 += x * y;
                    }
                    acc
                };
                if gamma == T::zero()
                    || alpha.min(beta) <= negligible
                    || gamma.abs() <= tol * (alpha * beta).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (lit::<T>(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate_rows(work.as_mut_slice(), len, i, j, c, s);
                rotate_rows(rot.as_mut_slice(), k, i, j, c, s);
            }
        }
        if !rotated {
            return Ok(());
        }
    }
    Err(Error::Numeric(format!(
        "one-sided Jacobi did not converge in {MAX_SWEEPS} sweeps"
    )))
}

#[inline]
fn rotate_rows<T: Real>(data: &mut [T], len: usize, i: usize, j: usize, c: T, s: T) {
    let (head, tail) = data.split_at_mut(j * len);
    let ri = &mut head[i * len..(i + 1) * len];
    let rj = &mut tail[..len];
    for (x, y) in ri.iter_mut().zip(rj.iter_mut()) {
        let (xi, yj) = (*x, *y);
        *x = c * xi - s * yj;
        *y = s * xi + c * yj;
    }
}

/// Replaces every vector flagged in `replace` with a unit vector orthogonal
/// to all other vectors in the set, using Gram-Schmidt on the standard basis.
///
/// Unflagged vectors must already be orthonormal.
pub fn complete_orthonormal_columns<T: Real>(vectors: &mut [Vec<T>], replace: &[bool]) {
    let Some(len) = vectors.first().map(Vec::len) else {
        return;
    };
    let mut basis_index = 0usize;
    for target in 0..vectors.len() {
        if !replace[target] {
            continue;
        }
        loop {
            assert!(
                basis_index < len,
                "cannot complete {} orthonormal vectors in dimension {len}",
                vectors.len()
            );
            let mut cand = vec![T::zero(); len];
            cand[basis_index] = T::one();
            basis_index += 1;
            for _ in 0..2 {
                for (idx, other) in vectors.iter().enumerate() {
                    if idx == target || (replace[idx] && idx > target) {
                        continue;
                    }
                    let proj = dot(&cand, other);
                    for (c, &o) in cand.iter_mut().zip(other) {
                        *c -= proj * o;
                    }
                }
            }
            let nrm = norm(&cand);
            if nrm > lit(0.5) {
                cand.iter_mut().for_each(|v| *v /= nrm);
                vectors[target] = cand;
                break;
            }
        }
    }
}
