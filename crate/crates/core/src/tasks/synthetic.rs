use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::scalar::Real;

/// Class-conditional Gaussian blobs clipped to `[0, 1]`.
///
/// With `P ≥ c` every class owns a block of pixels that is brighter than the
/// background; otherwise classes differ by a uniform brightness level. The
/// per-pixel noise is one eighth of the smallest distance between class
/// means. Sample `i` has label `i mod c`. When `P` is a perfect square the
/// images are square, which keeps them rotatable.
pub fn synthetic_dataset<T: Real>(seed: u64, n: usize, num_pixels: usize, num_classes: usize) -> Result<Dataset<T>> {
    if num_pixels == 0 || num_classes == 0 {
        return Err(Error::arg("synthetic data needs positive P and c"));
    }
    let (means, min_dist) = class_means(num_pixels, num_classes);
    let sigma = if num_classes > 1 { min_dist / 8.0 } else { 0.05 };
    let noise = Normal::new(0.0, sigma).expect("positive sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = DenseMatrix::zeros(n, num_pixels);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % num_classes;
        labels.push(y);
        for (v, &m) in images.row_mut(i).iter_mut().zip(&means[y]) {
            *v = T::from_f64_lossy((m + noise.sample(&mut rng)).clamp(0.0, 1.0));
        }
    }
    let side = (num_pixels as f64).sqrt().round() as usize;
    let shape = if side * side == num_pixels {
        (side, side, 1)
    } else {
        (1, num_pixels, 1)
    };
    Dataset::new(images, labels, shape, num_classes)
}

fn class_means(p: usize, c: usize) -> (Vec<Vec<f64>>, f64) {
    if p >= c {
        let block = p / c;
        let means = (0..c)
            .map(|y| {
                (0..p)
                    .map(|j| if j / block == y { 0.7 } else { 0.3 })
                    .collect()
            })
            .collect();
        (means, 0.4 * (2.0 * block as f64).sqrt())
    } else {
        let step = if c > 1 { 0.6 / (c - 1) as f64 } else { 0.0 };
        let means = (0..c).map(|y| vec![0.2 + step * y as f64; p]).collect();
        (means, step * (p as f64).sqrt())
    }
}
