//! Lightweight per-(task, class) generators built from a truncated SVD.
//!
//! A record keeps `U` (`P x r`) plus the mean and covariance of the
//! right-singular coordinates, both already scaled by the singular values.
//! Sampling draws a coordinate vector from the matching normal distribution
//! and maps it back through `U`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{complete_orthonormal_columns, sample_mvn, truncated_svd, DenseMatrix};
use crate::scalar::{lit, Real};

pub const STORE_MAGIC: &[u8; 4] = b"SVDG";
pub const STORE_VERSION: u32 = 1;
/// magic + version + record count + P + r
pub const STORE_HEADER_BYTES: usize = 4 + 4 * 4;
/// task + class
pub const RECORD_HEADER_BYTES: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorRecord<T> {
    pub task: usize,
    pub class: usize,
    /// `P x r` with orthonormal columns.
    pub u: DenseMatrix<T>,
    /// Singular-value-scaled mean of the right-singular coordinates.
    pub mean: Vec<T>,
    /// Singular-value-scaled covariance of the right-singular coordinates.
    pub cov: DenseMatrix<T>,
}

impl<T: Real> GeneratorRecord<T> {
    pub fn rank(&self) -> usize {
        self.mean.len()
    }

    pub fn num_pixels(&self) -> usize {
        self.u.rows()
    }

    /// Scalars persisted for this record: `P·r + r² + r`.
    pub fn stored_scalars(&self) -> usize {
        record_scalars(self.num_pixels(), self.rank())
    }
}

/// `P·r + r² + r`.
pub fn record_scalars(num_pixels: usize, rank: usize) -> usize {
    num_pixels * rank + rank * rank + rank
}

/// All generators kept by a learner, keyed by `(task, class)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorStore<T> {
    rank: usize,
    num_pixels: usize,
    records: BTreeMap<(usize, usize), GeneratorRecord<T>>,
}

impl<T: Real> GeneratorStore<T> {
    pub fn new(num_pixels: usize, rank: usize) -> Result<Self> {
        if num_pixels == 0 || rank == 0 {
            return Err(Error::arg("generator store needs positive P and rank"));
        }
        if rank > num_pixels {
            return Err(Error::arg(format!(
                "rank {rank} exceeds the {num_pixels} available dimensions"
            )));
        }
        Ok(Self {
            rank,
            num_pixels,
            records: BTreeMap::new(),
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn num_pixels(&self) -> usize {
        self.num_pixels
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, task: usize, class: usize) -> Option<&GeneratorRecord<T>> {
        self.records.get(&(task, class))
    }

    pub fn records(&self) -> impl Iterator<Item = &GeneratorRecord<T>> {
        self.records.values()
    }

    /// Inserts (or replaces) a record after checking it matches the store's shape.
    pub fn insert(&mut self, record: GeneratorRecord<T>) -> Result<()> {
        if record.num_pixels() != self.num_pixels
            || record.rank() != self.rank
            || record.cov.shape() != (self.rank, self.rank)
            || record.u.cols() != self.rank
        {
            return Err(Error::arg(format!(
                "record for ({}, {}) has P={} r={}, store expects P={} r={}",
                record.task,
                record.class,
                record.num_pixels(),
                record.rank(),
                self.num_pixels,
                self.rank
            )));
        }
        self.records.insert((record.task, record.class), record);
        Ok(())
    }

    /// Total persisted scalars, `records · (P·r + r² + r)`.
    pub fn stored_entries(&self) -> usize {
        self.records.len() * record_scalars(self.num_pixels, self.rank)
    }

    /// Exact size of the serialized store in bytes.
    pub fn serialized_len(&self) -> usize {
        STORE_HEADER_BYTES + self.records.len() * RECORD_HEADER_BYTES + self.stored_entries() * 8
    }
}

/// Fits the generator for one `(task, class)` cell and inserts it into `store`.
///
/// `data` is `P x m`, one flattened sample per column. When `m` (or `P`) is
/// smaller than the store's rank the fit uses the smaller rank and pads the
/// record with extra orthonormal directions whose mean and variance are zero.
pub fn store_generator<'s, T: Real>(
    data: &DenseMatrix<T>,
    task: usize,
    class: usize,
    store: &'s mut GeneratorStore<T>,
) -> Result<&'s GeneratorRecord<T>> {
    let (p, m) = data.shape();
    if m == 0 {
        return Err(Error::arg(format!(
            "no samples to fit generator ({task}, {class})"
        )));
    }
    if p != store.num_pixels {
        return Err(Error::arg(format!(
            "samples have {p} pixels, store expects {}",
            store.num_pixels
        )));
    }
    let rank = store.rank;
    let effective = rank.min(m);
    if effective < rank {
        log::warn!(
            "generator ({task}, {class}): only {m} samples, rank lowered from {rank} to {effective}"
        );
    }

    let factors = truncated_svd(data, effective)?;
    // diag(S)·Vh equals Uᵀ·data; the projection keeps identical samples
    // bit-identical in coefficient space.
    let coeffs = factors.u.matmul_tn(data)?;
    let (mean, cov) = population_moments(&coeffs);

    let record = if effective == rank {
        GeneratorRecord {
            task,
            class,
            u: factors.u,
            mean,
            cov,
        }
    } else {
        let mut cols: Vec<Vec<T>> = (0..effective).map(|j| factors.u.column(j)).collect();
        cols.resize(rank, vec![T::zero(); p]);
        let pad: Vec<bool> = (0..rank).map(|j| j >= effective).collect();
        complete_orthonormal_columns(&mut cols, &pad);
        let mut padded_mean = mean;
        padded_mean.resize(rank, T::zero());
        let padded_cov = DenseMatrix::from_fn(rank, rank, |i, j| {
            if i < effective && j < effective {
                cov[(i, j)]
            } else {
                T::zero()
            }
        });
        GeneratorRecord {
            task,
            class,
            u: DenseMatrix::from_columns(&cols)?,
            mean: padded_mean,
            cov: padded_cov,
        }
    };
    store.insert(record)?;
    Ok(store.get(task, class).expect("just inserted"))
}

/// Row means and population covariance of the columns of `coeffs` (`r x m`).
///
/// The mean is accumulated relative to the first column, so a set of
/// identical columns has exactly zero deviation and zero covariance.
fn population_moments<T: Real>(coeffs: &DenseMatrix<T>) -> (Vec<T>, DenseMatrix<T>) {
    let (r, m) = coeffs.shape();
    let inv_m = T::one() / lit::<T>(m as f64);
    let mean: Vec<T> = (0..r)
        .map(|i| {
            let row = coeffs.row(i);
            let shift = row[0];
            let acc: T = row.iter().map(|&v| v - shift).sum();
            shift + acc * inv_m
        })
        .collect();
    let centered = DenseMatrix::from_fn(r, m, |i, j| coeffs[(i, j)] - mean[i]);
    let mut cov = DenseMatrix::zeros(r, r);
    for i in 0..r {
        for j in 0..=i {
            let v: T = centered
                .row(i)
                .iter()
                .zip(centered.row(j))
                .map(|(&a, &b)| a * b)
                .sum::<T>()
                * inv_m;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    (mean, cov)
}

/// Draws one synthetic sample for `(task, class)`: `U · N(mean, cov)`.
///
/// The output is not clipped to the pixel range.
pub fn generate_sample<T: Real, R: Rng + ?Sized>(
    store: &GeneratorStore<T>,
    task: usize,
    class: usize,
    rng: &mut R,
) -> Result<(Vec<T>, usize)> {
    let record = store
        .get(task, class)
        .ok_or(Error::MissingRecord { task, class })?;
    let coords = sample_mvn(&record.mean, &record.cov, rng)?;
    Ok((record.u.matvec(&coords)?, class))
}

/// Raw-sample memory divided by generator memory: `P·s / (c·(P·r + r² + r))`.
pub fn compression_factor(num_pixels: usize, samples: usize, classes: usize, rank: usize) -> Result<f64> {
    if num_pixels == 0 || samples == 0 || classes == 0 || rank == 0 {
        return Err(Error::arg("compression factor arguments must all be positive"));
    }
    let raw = (num_pixels * samples) as f64;
    let generator = (classes * record_scalars(num_pixels, rank)) as f64;
    Ok(raw / generator)
}

/// Raw samples per task that fit in the same memory as the generators: `⌈s / f⌉`.
pub fn memory_equivalent_samples(samples: usize, factor: f64) -> Result<usize> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::arg(format!("compression factor must be positive, got {factor}")));
    }
    Ok((samples as f64 / factor).ceil() as usize)
}

/// Serializes the store in the little-endian `SVDG` layout.
pub fn encode_store<T: Real>(store: &GeneratorStore<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(store.serialized_len());
    out.extend_from_slice(STORE_MAGIC);
    for v in [
        STORE_VERSION,
        store.records.len() as u32,
        store.num_pixels as u32,
        store.rank as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for rec in store.records.values() {
        out.extend_from_slice(&(rec.task as u32).to_le_bytes());
        out.extend_from_slice(&(rec.class as u32).to_le_bytes());
        for v in rec
            .u
            .as_slice()
            .iter()
            .chain(&rec.mean)
            .chain(rec.cov.as_slice())
        {
            v.to_f64_lossy().write_le(&mut out);
        }
    }
    debug_assert_eq!(out.len(), store.serialized_len());
    out
}

pub fn save_store<T: Real>(store: &GeneratorStore<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_store(store)).map_err(|e| Error::io(path, e))
}

pub fn load_store<T: Real>(path: impl AsRef<Path>) -> Result<GeneratorStore<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_store(&bytes)
}

pub fn decode_store<T: Real>(bytes: &[u8]) -> Result<GeneratorStore<T>> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic bytes")?;
    if magic != STORE_MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected \"SVDG\"")));
    }
    let version = cur.u32("version")?;
    if version != STORE_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let count = cur.u32("record count")? as usize;
    let p = cur.u32("pixel count")? as usize;
    let r = cur.u32("rank")? as usize;
    if p == 0 || r == 0 {
        return Err(Error::format(12, format!("invalid shape P={p}, r={r}")));
    }
    let per_record = RECORD_HEADER_BYTES + record_scalars(p, r) * 8;
    let expected = STORE_HEADER_BYTES as u64 + count as u64 * per_record as u64;
    if expected != bytes.len() as u64 {
        let offset = if expected > bytes.len() as u64 {
            bytes.len() as u64
        } else {
            expected
        };
        return Err(Error::format(
            offset,
            format!(
                "record count {count} implies {expected} bytes but file has {}",
                bytes.len()
            ),
        ));
    }

    let mut store = GeneratorStore::new(p, r)?;
    for _ in 0..count {
        let record_offset = cur.pos as u64;
        let task = cur.u32("task id")? as usize;
        let class = cur.u32("class label")? as usize;
        let u = cur.reals::<T>(p * r, "U")?;
        let mean = cur.reals::<T>(r, "mean")?;
        let cov = cur.reals::<T>(r * r, "covariance")?;
        if store.records.contains_key(&(task, class)) {
            return Err(Error::format(
                record_offset,
                format!("duplicate record ({task}, {class})"),
            ));
        }
        store.insert(GeneratorRecord {
            task,
            class,
            u: DenseMatrix::from_vec(p, r, u)?,
            mean,
            cov: DenseMatrix::from_vec(r, r, cov)?,
        })?;
    }
    Ok(store)
}

pub(crate) struct Cursor<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn reals<T: Real>(&mut self, n: usize, what: &str) -> Result<Vec<T>> {
        let start = self.pos as u64;
        let b = self.take(n * 8, what)?;
        let vals: Vec<T> = b
            .chunks_exact(8)
            .map(|c| T::from_f64_lossy(f64::read_le(c)))
            .collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(start, format!("non-finite value in {what}")));
        }
        Ok(vals)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constant_class(x: &[f64], m: usize) -> DenseMatrix<f64> {
        DenseMatrix::from_fn(x.len(), m, |i, _| x[i])
    }

    #[test]
    fn constant_class_has_zero_covariance() {
        let x = [0.2, 0.9, 0.0, 0.4, 0.7];
        let mut store = GeneratorStore::new(5, 1).unwrap();
        let rec = store_generator(&constant_class(&x, 7), 0, 3, &mut store).unwrap();
        assert_eq!(rec.cov.as_slice(), &[0.0]);
        assert!((rec.mean[0] - norm(&x)).abs() < 1e-12);
        for i in 0..5 {
            assert!((rec.u[(i, 0)] - x[i] / norm(&x)).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (first, class) = generate_sample(&store, 0, 3, &mut rng).unwrap();
        assert_eq!(class, 3);
        for (a, b) in first.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
        for _ in 0..10 {
            let (again, _) = generate_sample(&store, 0, 3, &mut rng).unwrap();
            assert_eq!(again, first);
        }
    }

    #[test]
    fn small_class_is_padded_to_store_rank() {
        let data = DenseMatrix::from_vec(4, 2, vec![1.0, 0.0, 0.5, 1.0, 0.0, 2.0, 1.0, 1.0]).unwrap();
        let mut store = GeneratorStore::new(4, 3).unwrap();
        let rec = store_generator(&data, 1, 0, &mut store).unwrap().clone();
        assert_eq!(rec.rank(), 3);
        assert_eq!(rec.mean[2], 0.0);
        assert_eq!(rec.cov.row(2), &[0.0, 0.0, 0.0]);
        let utu = rec.u.matmul_tn(&rec.u).unwrap();
        assert!(utu.sub(&DenseMatrix::identity(3)).unwrap().max_abs() < 1e-12);
        assert_eq!(rec.stored_scalars(), 4 * 3 + 9 + 3);
    }

    #[test]
    fn refit_replaces_record() {
        let mut store = GeneratorStore::new(3, 1).unwrap();
        store_generator(&constant_class(&[1.0, 0.0, 0.0], 2), 0, 0, &mut store).unwrap();
        store_generator(&constant_class(&[0.0, 2.0, 0.0], 2), 0, 0, &mut store).unwrap();
        assert_eq!(store.len(), 1);
        assert!((store.get(0, 0).unwrap().mean[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(GeneratorStore::<f64>::new(2, 3).is_err());
        let mut store = GeneratorStore::<f64>::new(3, 1).unwrap();
        let empty = DenseMatrix::zeros(3, 0);
        assert!(matches!(
            store_generator(&empty, 0, 0, &mut store),
            Err(Error::Argument(_))
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        match generate_sample(&store, 4, 2, &mut rng) {
            Err(Error::MissingRecord { task: 4, class: 2 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(compression_factor(0, 1, 1, 1).is_err());
        assert!(memory_equivalent_samples(1000, 0.0).is_err());
    }

    #[test]
    fn record_scalar_count() {
        assert_eq!(record_scalars(784, 5), 3950);
    }

    #[test]
    fn empty_file_is_format_error() {
        match decode_store::<f64>(&[]) {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
