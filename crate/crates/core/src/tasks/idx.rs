use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::scalar::Real;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Loads an IDX image/label file pair (MNIST distribution format).
///
/// Pixel bytes are scaled by `1/255`. The class count is one more than the
/// largest label present.
pub fn load_idx<T: Real>(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset<T>> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let labels = fs::read(lp).map_err(|e| Error::io(lp, e))?;
    parse_idx(&images, &labels)
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(offset as u64, format!("truncated {what}")))
}

pub fn parse_idx<T: Real>(images: &[u8], labels: &[u8]) -> Result<Dataset<T>> {
    let magic = be_u32(images, 0, "image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(0, format!("image magic {magic:#010x}, expected 0x00000803")));
    }
    let n = be_u32(images, 4, "image count")? as usize;
    let rows = be_u32(images, 8, "row count")? as usize;
    let cols = be_u32(images, 12, "column count")? as usize;
    let pixels = rows * cols;
    let need = 16 + n * pixels;
    if images.len() < need {
        return Err(Error::format(
            images.len() as u64,
            format!("image payload truncated: {n} images of {rows}x{cols} need {need} bytes"),
        ));
    }

    let lmagic = be_u32(labels, 0, "label magic")?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(Error::format(0, format!("label magic {lmagic:#010x}, expected 0x00000801")));
    }
    let ln = be_u32(labels, 4, "label count")? as usize;
    if ln != n {
        return Err(Error::format(4, format!("label file has {ln} entries, image file has {n}")));
    }
    if labels.len() < 8 + n {
        return Err(Error::format(labels.len() as u64, "label payload truncated"));
    }

    let data: Vec<T> = images[16..need]
        .iter()
        .map(|&b| T::from_f64_lossy(b as f64 / 255.0))
        .collect();
    let ys: Vec<usize> = labels[8..8 + n].iter().map(|&b| b as usize).collect();
    let num_classes = ys.iter().max().map_or(1, |&m| m + 1);
    Dataset::new(
        DenseMatrix::from_vec(n, pixels, data)?,
        ys,
        (rows, cols, 1),
        num_classes,
    )
}

/// Writes a single-channel dataset back out as an IDX pair, quantizing pixels
/// to `round(255 · v)`.
pub fn write_idx<T: Real>(ds: &Dataset<T>, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    if ds.channels != 1 {
        return Err(Error::arg("IDX output supports single-channel images only"));
    }
    let mut img = Vec::with_capacity(16 + ds.images.as_slice().len());
    for v in [IDX_IMAGES_MAGIC, ds.len() as u32, ds.height as u32, ds.width as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(
        ds.images
            .as_slice()
            .iter()
            .map(|v| (v.to_f64_lossy() * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    let mut lab = Vec::with_capacity(8 + ds.len());
    for v in [IDX_LABELS_MAGIC, ds.len() as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    for &y in &ds.labels {
        if y > 255 {
            return Err(Error::arg(format!("label {y} does not fit in a byte")));
        }
        lab.push(y as u8);
    }
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    fs::write(ip, img).map_err(|e| Error::io(ip, e))?;
    fs::write(lp, lab).map_err(|e| Error::io(lp, e))
}
