use super::Dataset;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::scalar::Real;

/// Source taps for one output pixel: up to four `(source index, weight)` pairs.
type Taps = Vec<(usize, f64)>;

/// Rotates every image clockwise by `degrees` about its center.
///
/// Bilinear interpolation; source positions outside the image read as 0.
/// Labels are unchanged.
pub fn rotate_dataset<T: Real>(ds: &Dataset<T>, degrees: f64) -> Result<Dataset<T>> {
    if ds.height != ds.width {
        return Err(Error::arg(format!(
            "rotation needs square images, got {}x{}",
            ds.height, ds.width
        )));
    }
    if !degrees.is_finite() {
        return Err(Error::arg("rotation angle must be finite"));
    }
    let side = ds.height;
    let plane = side * side;
    let taps = rotation_taps(side, degrees);
    let p = ds.num_pixels();
    let mut out = DenseMatrix::zeros(ds.len(), p);
    for i in 0..ds.len() {
        let src = ds.images.row(i);
        let dst = out.row_mut(i);
        for ch in 0..ds.channels {
            let base = ch * plane;
            for (d, tap) in taps.iter().enumerate() {
                let mut acc = T::zero();
                for &(s, w) in tap {
                    acc += T::from_f64_lossy(w) * src[base + s];
                }
                dst[base + d] = acc;
            }
        }
    }
    Dataset::new(out, ds.labels.clone(), ds.shape(), ds.num_classes)
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

fn rotation_taps(side: usize, degrees: f64) -> Vec<Taps> {
    let (sin, cos) = degrees.to_radians().sin_cos();
    let center = (side as f64 - 1.0) / 2.0;
    let mut taps = Vec::with_capacity(side * side);
    for r in 0..side {
        for c in 0..side {
            let (x, y) = (c as f64 - center, r as f64 - center);
            // inverse of the clockwise map (x, y) -> (x cos - y sin, x sin + y cos)
            let sx = snap(x * cos + y * sin + center);
            let sy = snap(-x * sin + y * cos + center);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let mut tap = Vec::with_capacity(4);
            for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
                for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                    let w = wx * wy;
                    let (xx, yy) = (x0 + dx, y0 + dy);
                    if w == 0.0 || xx < 0.0 || yy < 0.0 || xx >= side as f64 || yy >= side as f64 {
                        continue;
                    }
                    tap.push((yy as usize * side + xx as usize, w));
                }
            }
            taps.push(tap);
        }
    }
    taps
}
