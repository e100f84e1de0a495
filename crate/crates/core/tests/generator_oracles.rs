mod common;

use common::*;
use rand::Rng;
use svd_replay::generator::{
    compression_factor, decode_store, encode_store, generate_sample, memory_equivalent_samples, store_generator,
    GeneratorStore, RECORD_HEADER_BYTES, STORE_HEADER_BYTES,
};
use svd_replay::linalg::DenseMatrix;
use svd_replay::Error;

#[test]
fn matches_literal_oracle_on_random_data() {
    let mut rng = rng(21);
    for case in 0..50 {
        let p = rng.random_range(2..10);
        let m = rng.random_range(2..14);
        let r = rng.random_range(1..=p.min(m));
        let data = DenseMatrix::from_fn(p, m, |_, _| rng.random_range(0.0..1.0));
        let dev = oracle_deviation(&data, r);
        assert!(dev < 1e-10, "case {case}: {p}x{m} r={r} deviates by {dev}");
    }
}

#[test]
fn generated_samples_follow_the_stored_distribution() {
    // samples are U·z with z ~ N(mean, cov); projecting back recovers z
    let mut rng = rng(22);
    let data = DenseMatrix::from_fn(12, 40, |_, _| rng.random_range(0.0..1.0));
    let mut store = GeneratorStore::new(12, 3).unwrap();
    let rec = store_generator(&data, 1, 4, &mut store).unwrap().clone();
    let n = 50_000;
    let mut sum = [0.0; 3];
    for _ in 0..n {
        let (x, class) = generate_sample(&store, 1, 4, &mut rng).unwrap();
        assert_eq!(class, 4);
        let z = rec.u.transpose().matvec(&x).unwrap();
        for i in 0..3 {
            sum[i] += z[i];
        }
    }
    for i in 0..3 {
        let est = sum[i] / n as f64;
        let sd = rec.cov[(i, i)].sqrt();
        assert!((est - rec.mean[i]).abs() < 4.0 * sd / (n as f64).sqrt() + 1e-9);
    }
}

#[test]
fn missing_record_is_reported() {
    let store = GeneratorStore::<f64>::new(4, 1).unwrap();
    let err = generate_sample(&store, 2, 3, &mut rng(0)).unwrap_err();
    assert!(matches!(err, Error::MissingRecord { task: 2, class: 3 }));
}

#[test]
fn compression_figures() {
    let cases = [(784, 10, 5, 19.85), (784, 2, 5, 99.24), (3072, 10, 5, 19.96), (3072, 2, 5, 99.81)];
    for (p, c, r, expected) in cases {
        let f = compression_factor(p, 1000, c, r).unwrap();
        assert!((f - expected).abs() <= 0.005, "P={p} c={c}: {f}");
    }
    let f = |p, c, r| compression_factor(p, 1000, c, r).unwrap();
    assert_eq!(memory_equivalent_samples(1000, f(784, 10, 5)).unwrap(), 51);
    assert_eq!(memory_equivalent_samples(1000, f(784, 2, 5)).unwrap(), 11);
    assert_eq!(memory_equivalent_samples(1000, f(3072, 10, 80)).unwrap(), 822);
    assert_eq!(memory_equivalent_samples(1000, f(3072, 2, 80)).unwrap(), 165);
}

#[test]
fn store_size_accounts_for_every_entry() {
    let mut rng = rng(23);
    let (p, r) = (9, 2);
    let mut store = GeneratorStore::new(p, r).unwrap();
    for class in 0..3 {
        let data = DenseMatrix::from_fn(p, 7, |_, _| rng.random_range(0.0..1.0));
        store_generator(&data, 0, class, &mut store).unwrap();
    }
    let bytes = encode_store(&store);
    let expected = STORE_HEADER_BYTES + 3 * (RECORD_HEADER_BYTES + (p * r + r * r + r) * 8);
    assert_eq!(bytes.len(), expected);
    assert_eq!(store.serialized_len(), expected);
    let back: GeneratorStore<f64> = decode_store(&bytes).unwrap();
    assert_eq!(back, store);
}

#[test]
fn constant_class_regenerates_exactly() {
    let v: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin().abs()).collect();
    let data = DenseMatrix::from_fn(16, 25, |i, _| v[i]);
    let mut store = GeneratorStore::new(16, 3).unwrap();
    let rec = store_generator(&data, 0, 0, &mut store).unwrap().clone();
    assert!(rec.cov.as_slice().iter().all(|&c| c == 0.0));
    let first = generate_sample(&store, 0, 0, &mut rng(1)).unwrap().0;
    for seed in 2..10 {
        assert_eq!(generate_sample(&store, 0, 0, &mut rng(seed)).unwrap().0, first);
    }
    assert!(max_abs_diff(&first, &v) < 1e-12);
}
