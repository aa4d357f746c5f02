//! Dense row-major tensors and the handful of linear-algebra kernels the
//! rest of the toolkit is built on.
//!
//! Values are stored as `f64`; the `Dtype` tag selects the arithmetic
//! precision of the contraction kernels. In `F32` mode matmul and conv
//! accumulate in genuine `f32` so round-off behaves like a single-precision
//! implementation; `F64` mode is used by gradient checks and property tests.
//! There is no broadcasting beyond bias-add.

use crate::error::{NsrError, Result};
use std::sync::atomic::{AtomicUsize, Ordering};

/// Worker-thread count used by `matmul` for large operands. The default of 1
/// keeps everything single-threaded and bit-identical to the serial kernels;
/// higher counts split the output rows across `std::thread` workers, which is
/// still deterministic because each row is computed independently.
static THREADS: AtomicUsize = AtomicUsize::new(1);

pub fn set_threads(n: usize) -> Result<()> {
    if n == 0 {
        return Err(NsrError::Argument("thread count must be at least 1".into()));
    }
    THREADS.store(n, Ordering::Relaxed);
    Ok(())
}

pub fn threads() -> usize {
    THREADS.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Dtype {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "f64")]
    F64,
}

impl Dtype {
    /// Wider of the two, used for matmul promotion.
    pub fn promote(self, other: Dtype) -> Dtype {
        if self == Dtype::F64 || other == Dtype::F64 {
            Dtype::F64
        } else {
            Dtype::F32
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    dtype: Dtype,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>, dtype: Dtype) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NsrError::Dimension(format!(
                "shape {:?} implies {} elements but data has {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor { shape, data, dtype })
    }

    pub fn zeros(shape: &[usize], dtype: Dtype) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n], dtype }
    }

    pub fn from_vec(data: Vec<f64>, dtype: Dtype) -> Tensor {
        Tensor { shape: vec![data.len()], data, dtype }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reinterpret under a new shape with the same element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(NsrError::Dimension(format!(
                "cannot reshape {:?} ({} elems) to {:?} ({} elems)",
                self.shape,
                self.data.len(),
                shape,
                n
            )));
        }
        Ok(Tensor { shape, data: self.data.clone(), dtype: self.dtype })
    }

    pub fn with_dtype(mut self, dtype: Dtype) -> Tensor {
        self.dtype = dtype;
        self
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let cols = self.shape[1];
        &mut self.data[i * cols..(i + 1) * cols]
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            dtype: self.dtype,
        }
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(NsrError::Dimension(format!(
                "elementwise add shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Tensor { shape: self.shape.clone(), data, dtype: self.dtype.promote(other.dtype) })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.add(&other.scale(-1.0))
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(NsrError::Dimension(format!(
                "elementwise add shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn norm_l2_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub fn norm_linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Transpose of a rank-2 tensor.
pub fn transpose(t: &Tensor) -> Result<Tensor> {
    if t.shape().len() != 2 {
        return Err(NsrError::Dimension(format!("transpose needs rank-2, got {:?}", t.shape())));
    }
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = t.data()[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out, t.dtype())
}

/// Standard matrix product of two rank-2 tensors. Output dtype is the wider
/// of the inputs; in pure-f32 mode the accumulation is done in f32.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 {
        return Err(NsrError::Dimension(format!(
            "matmul needs rank-2 operands, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(NsrError::Dimension(format!(
            "matmul inner extents differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let dtype = a.dtype().promote(b.dtype());
    let mut out = vec![0.0f64; m * n];

    // Row kernels: each writes rows `[lo, lo + rows)` of the product into
    // `chunk`. ikj order so the inner loop is a contiguous axpy.
    let rows_f64 = |lo: usize, chunk: &mut [f64]| {
        for (r, orow) in chunk.chunks_mut(n).enumerate() {
            let arow = a.row(lo + r);
            for (kk, &av) in arow.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let brow = &b.data()[kk * n..(kk + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    };
    let bf: Vec<f32> = if dtype == Dtype::F32 {
        b.data().iter().map(|&v| v as f32).collect()
    } else {
        Vec::new()
    };
    let rows_f32 = |lo: usize, chunk: &mut [f64]| {
        let mut orow = vec![0.0f32; n];
        for (r, out_row) in chunk.chunks_mut(n).enumerate() {
            orow.iter_mut().for_each(|v| *v = 0.0);
            let arow = a.row(lo + r);
            for (kk, &av) in arow.iter().enumerate() {
                let av = av as f32;
                if av == 0.0 {
                    continue;
                }
                let brow = &bf[kk * n..(kk + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
            for (o, &v) in out_row.iter_mut().zip(&orow) {
                *o = v as f64;
            }
        }
    };
    let run = |lo: usize, chunk: &mut [f64]| match dtype {
        Dtype::F64 => rows_f64(lo, chunk),
        Dtype::F32 => rows_f32(lo, chunk),
    };

    let workers = threads().min(m.max(1));
    if workers <= 1 || m < 2 * workers {
        run(0, &mut out);
    } else {
        let per = m.div_ceil(workers);
        std::thread::scope(|scope| {
            for (w, chunk) in out.chunks_mut(per * n).enumerate() {
                let run = &run;
                scope.spawn(move || run(w * per, chunk));
            }
        });
    }
    Tensor::new(vec![m, n], out, dtype)
}

/// 1-D cross-correlation with zero padding.
///
/// `x` is `[in_ch, length]`, `kernels` is `[out_ch, in_ch, k]`; the output is
/// `[out_ch, out_len]` with `out_len = (length + 2*pad - k) / stride + 1`.
pub fn conv1d(x: &Tensor, kernels: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    if x.shape().len() != 2 || kernels.shape().len() != 3 {
        return Err(NsrError::Dimension(format!(
            "conv1d expects x rank-2 [ch, len] and kernels rank-3 [out, in, k], got {:?} / {:?}",
            x.shape(),
            kernels.shape()
        )));
    }
    let (in_ch, len) = (x.shape()[0], x.shape()[1]);
    let (out_ch, kc, k) = (kernels.shape()[0], kernels.shape()[1], kernels.shape()[2]);
    if kc != in_ch {
        return Err(NsrError::Dimension(format!(
            "conv1d channel mismatch: input has {in_ch} channels, kernels expect {kc}"
        )));
    }
    if stride == 0 {
        return Err(NsrError::Argument("conv1d stride must be positive".into()));
    }
    let padded = len + 2 * pad;
    if padded < k {
        return Err(NsrError::Dimension(format!(
            "conv1d output collapses: length {len} + 2*{pad} pad < kernel {k}"
        )));
    }
    let out_len = (padded - k) / stride + 1;
    let dtype = x.dtype().promote(kernels.dtype());
    let mut out = vec![0.0f64; out_ch * out_len];
    for oc in 0..out_ch {
        for ot in 0..out_len {
            let start = ot * stride;
            let mut acc64 = 0.0f64;
            let mut acc32 = 0.0f32;
            for ic in 0..in_ch {
                let xrow = x.row(ic);
                let krow = &kernels.data()[(oc * in_ch + ic) * k..(oc * in_ch + ic + 1) * k];
                for (kk, &kv) in krow.iter().enumerate() {
                    let pos = start + kk;
                    if pos < pad || pos - pad >= len {
                        continue;
                    }
                    let xv = xrow[pos - pad];
                    match dtype {
                        Dtype::F64 => acc64 += xv * kv,
                        Dtype::F32 => acc32 += (xv as f32) * (kv as f32),
                    }
                }
            }
            out[oc * out_len + ot] = match dtype {
                Dtype::F64 => acc64,
                Dtype::F32 => acc32 as f64,
            };
        }
    }
    Tensor::new(vec![out_ch, out_len], out, dtype)
}

/// Output length of a conv/pool window sweep, or None when it collapses.
pub fn window_out_len(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Materialize the shared-weight (Toeplitz) matrix of a conv1d so that
/// `conv1d(x, kernels) == matmul(T, flatten(x))` reshaped. Rows index
/// (out_ch, out_pos), columns index (in_ch, in_pos).
pub fn conv1d_toeplitz(kernels: &Tensor, in_len: usize, stride: usize, pad: usize) -> Result<Tensor> {
    let (out_ch, in_ch, k) = (kernels.shape()[0], kernels.shape()[1], kernels.shape()[2]);
    let out_len = window_out_len(in_len, k, stride, pad).ok_or_else(|| {
        NsrError::Dimension(format!("toeplitz output collapses for len {in_len}, k {k}, pad {pad}"))
    })?;
    let rows = out_ch * out_len;
    let cols = in_ch * in_len;
    let mut t = vec![0.0f64; rows * cols];
    for oc in 0..out_ch {
        for ot in 0..out_len {
            let row = oc * out_len + ot;
            for ic in 0..in_ch {
                for kk in 0..k {
                    let pos = ot * stride + kk;
                    if pos < pad || pos - pad >= in_len {
                        continue;
                    }
                    let col = ic * in_len + (pos - pad);
                    t[row * cols + col] = kernels.data()[(oc * in_ch + ic) * k + kk];
                }
            }
        }
    }
    Tensor::new(vec![rows, cols], t, kernels.dtype())
}
