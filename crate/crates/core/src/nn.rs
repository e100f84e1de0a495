//! Fully connected ReLU network with softmax cross-entropy and plain SGD.
//!
//! Parameters live in one flat vector (per layer: weight `in x out` row-major,
//! then bias) so gradients can be projected and applied as plain vectors.

use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::generator::Cursor;
use crate::linalg::DenseMatrix;
use crate::scalar::{lit, Real};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MLPW";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Layer widths from input to output, e.g. `[784, 200, 200, 10]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    dims: Vec<usize>,
}

impl Layout {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::arg(format!("invalid layer widths {dims:?}")));
        }
        Ok(Self { dims })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn offset(&self, layer: usize) -> usize {
        self.dims[..=layer]
            .windows(2)
            .take(layer)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    pub fn weight_range(&self, layer: usize) -> Range<usize> {
        let start = self.offset(layer);
        start..start + self.dims[layer] * self.dims[layer + 1]
    }

    pub fn bias_range(&self, layer: usize) -> Range<usize> {
        let start = self.weight_range(layer).end;
        start..start + self.dims[layer + 1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<T> {
    layout: Layout,
    values: Vec<T>,
}

/// Flattened gradient with the same layout as [`MlpParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientVector<T> {
    pub layout: Layout,
    pub values: Vec<T>,
}

impl<T: Real> GradientVector<T> {
    pub fn zeros(layout: Layout) -> Self {
        let n = layout.param_count();
        Self {
            layout,
            values: vec![T::zero(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl<T: Real> MlpParams<T> {
    pub fn from_flat(layout: Layout, values: Vec<T>) -> Result<Self> {
        if values.len() != layout.param_count() {
            return Err(Error::arg(format!(
                "expected {} parameters, got {}",
                layout.param_count(),
                values.len()
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn zeros(layout: Layout) -> Self {
        let n = layout.param_count();
        Self {
            layout,
            values: vec![T::zero(); n],
        }
    }

    /// Builds parameters from `(weight in x out, bias)` pairs.
    pub fn from_layers(layers: &[(DenseMatrix<T>, Vec<T>)]) -> Result<Self> {
        let mut dims = Vec::with_capacity(layers.len() + 1);
        let mut values = Vec::new();
        for (i, (w, b)) in layers.iter().enumerate() {
            if i == 0 {
                dims.push(w.rows());
            } else if w.rows() != *dims.last().unwrap() {
                return Err(Error::arg(format!("layer {i} input width does not chain")));
            }
            if b.len() != w.cols() {
                return Err(Error::arg(format!("layer {i} bias length mismatch")));
            }
            dims.push(w.cols());
            values.extend_from_slice(w.as_slice());
            values.extend_from_slice(b);
        }
        Self::from_flat(Layout::new(dims)?, values)
    }

    pub fn layers(&self) -> Vec<(DenseMatrix<T>, Vec<T>)> {
        (0..self.layout.num_layers())
            .map(|l| {
                let d = self.layout.dims();
                let w = DenseMatrix::from_vec(d[l], d[l + 1], self.weight(l).to_vec())
                    .expect("layout-consistent slice");
                (w, self.bias(l).to_vec())
            })
            .collect()
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    pub fn weight(&self, layer: usize) -> &[T] {
        &self.values[self.layout.weight_range(layer)]
    }

    pub fn bias(&self, layer: usize) -> &[T] {
        &self.values[self.layout.bias_range(layer)]
    }
}

/// Inputs (`b x P`, one sample per row) with their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub inputs: DenseMatrix<T>,
    pub labels: Vec<usize>,
}

impl<T: Real> Batch<T> {
    pub fn new(inputs: DenseMatrix<T>, labels: Vec<usize>) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::arg(format!(
                "{} input rows but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &Batch<T>) -> Result<Batch<T>> {
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Batch::new(self.inputs.vstack(&other.inputs)?, labels)
    }
}

/// Glorot-uniform weights and zero biases, deterministic in `seed`.
pub fn init_params<T: Real>(seed: u64, dims: &[usize]) -> Result<MlpParams<T>> {
    init_params_with(&mut ChaCha8Rng::seed_from_u64(seed), dims)
}

pub fn init_params_with<T: Real, R: Rng + ?Sized>(rng: &mut R, dims: &[usize]) -> Result<MlpParams<T>> {
    let layout = Layout::new(dims.to_vec())?;
    let mut params = MlpParams::zeros(layout.clone());
    for l in 0..layout.num_layers() {
        let (fan_in, fan_out) = (dims[l], dims[l + 1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for w in &mut params.values[layout.weight_range(l)] {
            *w = T::from_f64_lossy(rng.random_range(-limit..limit));
        }
    }
    Ok(params)
}

struct Trace<T> {
    /// Input to each layer; `acts[0]` is the batch itself.
    acts: Vec<DenseMatrix<T>>,
    /// Pre-activations of each layer; the last one holds the logits.
    pre: Vec<DenseMatrix<T>>,
}

fn affine<T: Real>(params: &MlpParams<T>, layer: usize, x: &DenseMatrix<T>) -> DenseMatrix<T> {
    let d = params.layout.dims();
    let (fan_in, fan_out) = (d[layer], d[layer + 1]);
    let mut z = DenseMatrix::zeros(x.rows(), fan_out);
    for i in 0..x.rows() {
        z.row_mut(i).copy_from_slice(params.bias(layer));
    }
    T::gemm(
        x.rows(),
        fan_in,
        fan_out,
        T::one(),
        x.as_slice(),
        fan_in as isize,
        1,
        params.weight(layer),
        fan_out as isize,
        1,
        T::one(),
        z.as_mut_slice(),
        fan_out as isize,
        1,
    );
    z
}

fn relu<T: Real>(z: &DenseMatrix<T>) -> DenseMatrix<T> {
    let mut a = z.clone();
    a.as_mut_slice()
        .iter_mut()
        .for_each(|v| *v = v.max(T::zero()));
    a
}

fn run_forward<T: Real>(params: &MlpParams<T>, inputs: &DenseMatrix<T>, keep: bool) -> Result<Trace<T>> {
    if inputs.cols() != params.layout.input_dim() {
        return Err(Error::arg(format!(
            "inputs have {} features, network expects {}",
            inputs.cols(),
            params.layout.input_dim()
        )));
    }
    let n = params.layout.num_layers();
    let mut acts = Vec::with_capacity(n);
    let mut pre = Vec::with_capacity(n);
    let mut x = inputs.clone();
    for l in 0..n {
        let z = affine(params, l, &x);
        let next = if l + 1 < n { Some(relu(&z)) } else { None };
        if keep {
            acts.push(x);
            pre.push(z);
        } else if l + 1 == n {
            pre.push(z);
        }
        match next {
            Some(a) => x = a,
            None => break,
        }
    }
    Ok(Trace { acts, pre })
}

/// Logits (`b x c_out`) for a batch of inputs.
pub fn forward<T: Real>(params: &MlpParams<T>, inputs: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    Ok(run_forward(params, inputs, false)?.pre.pop().expect("at least one layer"))
}

/// Mean softmax cross-entropy over the batch and its exact gradient.
pub fn loss_and_grad<T: Real>(params: &MlpParams<T>, batch: &Batch<T>) -> Result<(T, GradientVector<T>)> {
    let b = batch.len();
    if b == 0 {
        return Err(Error::arg("loss of an empty batch"));
    }
    let c = params.layout.output_dim();
    if let Some(&bad) = batch.labels.iter().find(|&&y| y >= c) {
        return Err(Error::arg(format!("label {bad} outside 0..{c}")));
    }
    let mut trace = run_forward(params, &batch.inputs, true)?;
    let inv_b = T::one() / lit::<T>(b as f64);

    // dL/dlogits = (softmax - onehot) / b
    let logits = trace.pre.last().unwrap();
    let mut delta = DenseMatrix::zeros(b, c);
    let mut loss = T::zero();
    for i in 0..b {
        let z = logits.row(i);
        let max = z.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let sum: T = z.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - z[batch.labels[i]];
        let d = delta.row_mut(i);
        for (k, dv) in d.iter_mut().enumerate() {
            *dv = (z[k] - lse).exp() * inv_b;
        }
        d[batch.labels[i]] -= inv_b;
    }
    loss *= inv_b;

    let layout = params.layout.clone();
    let mut grad = GradientVector::zeros(layout.clone());
    let dims = layout.dims();
    for l in (0..layout.num_layers()).rev() {
        let (fan_in, fan_out) = (dims[l], dims[l + 1]);
        let a = &trace.acts[l];
        let wr = layout.weight_range(l);
        T::gemm(
            fan_in,
            b,
            fan_out,
            T::one(),
            a.as_slice(),
            1,
            fan_in as isize,
            delta.as_slice(),
            fan_out as isize,
            1,
            T::zero(),
            &mut grad.values[wr],
            fan_out as isize,
            1,
        );
        let gb = &mut grad.values[layout.bias_range(l)];
        for i in 0..b {
            for (g, &d) in gb.iter_mut().zip(delta.row(i)) {
                *g += d;
            }
        }
        if l > 0 {
            let mut upstream = DenseMatrix::zeros(b, fan_in);
            T::gemm(
                b,
                fan_out,
                fan_in,
                T::one(),
                delta.as_slice(),
                fan_out as isize,
                1,
                params.weight(l),
                1,
                fan_out as isize,
                T::zero(),
                upstream.as_mut_slice(),
                fan_in as isize,
                1,
            );
            let z = &trace.pre[l - 1];
            for (u, &zv) in upstream.as_mut_slice().iter_mut().zip(z.as_slice()) {
                if zv <= T::zero() {
                    *u = T::zero();
                }
            }
            delta = upstream;
        }
    }
    trace.acts.clear();
    Ok((loss, grad))
}

/// `params <- params - eta * grad`.
pub fn sgd_step<T: Real>(params: &mut MlpParams<T>, grad: &GradientVector<T>, eta: T) -> Result<()> {
    if !(eta > T::zero()) {
        return Err(Error::arg(format!("learning rate must be positive, got {eta}")));
    }
    if grad.layout != params.layout {
        return Err(Error::arg("gradient layout does not match parameters"));
    }
    if grad.values.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    for (p, &g) in params.values.iter_mut().zip(&grad.values) {
        *p -= eta * g;
    }
    Ok(())
}

pub fn encode_params<T: Real>(params: &MlpParams<T>) -> Vec<u8> {
    let dims = params.layout.dims();
    let mut out = Vec::with_capacity(12 + 4 * dims.len() + 8 * params.values.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &params.values {
        v.to_f64_lossy().write_le(&mut out);
    }
    out
}

pub fn decode_params<T: Real>(bytes: &[u8]) -> Result<MlpParams<T>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic bytes")? != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "bad magic, expected \"MLPW\""));
    }
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let n = cur.u32("layer count")? as usize;
    let dims = (0..n)
        .map(|_| cur.u32("layer width").map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let layout = Layout::new(dims).map_err(|e| Error::format(12, e.to_string()))?;
    let values = cur.reals::<T>(layout.param_count(), "parameters")?;
    if cur.pos != bytes.len() {
        return Err(Error::format(cur.pos as u64, "trailing bytes after parameters"));
    }
    MlpParams::from_flat(layout, values)
}

pub fn save_params<T: Real>(params: &MlpParams<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_params(params)).map_err(|e| Error::io(path, e))
}

pub fn load_params<T: Real>(path: impl AsRef<Path>) -> Result<MlpParams<T>> {
    let path = path.as_ref();
    decode_params(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
