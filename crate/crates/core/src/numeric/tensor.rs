use std::fmt;

use crate::error::{Result, SeedError};

/// Dense row-major `f64` tensor.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?} {:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?} [{} values]", self.shape, self.data.len())
        }
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(SeedError::shape(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
        }
    }

    /// Builds a 2-D tensor from nested rows; panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            shape: vec![rows.len(), cols],
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Size of the last axis (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| {
                assert!(i < n, "index {index:?} out of bounds for {:?}", self.shape);
                acc * n + i
            })
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub fn into_reshaped(self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(SeedError::shape(format!(
                "elementwise op on {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reorders axes; `axes[i]` names the source axis placed at position `i`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let nd = self.shape.len();
        let mut seen = vec![false; nd];
        if axes.len() != nd || axes.iter().any(|&a| a >= nd || std::mem::replace(&mut seen[a], true))
        {
            return Err(SeedError::shape(format!(
                "invalid permutation {axes:?} for shape {:?}",
                self.shape
            )));
        }
        let src_strides = strides(&self.shape);
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let perm_strides: Vec<usize> = axes.iter().map(|&a| src_strides[a]).collect();
        let mut out = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; nd];
        let mut src = 0usize;
        for _ in 0..self.data.len() {
            out.push(self.data[src]);
            // odometer increment over the output index
            for d in (0..nd).rev() {
                idx[d] += 1;
                src += perm_strides[d];
                if idx[d] < out_shape[d] {
                    break;
                }
                src -= perm_strides[d] * out_shape[d];
                idx[d] = 0;
            }
        }
        Ok(Tensor {
            shape: out_shape,
            data: out,
        })
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&self) -> Result<Tensor> {
        let nd = self.ndim();
        if nd < 2 {
            return Err(SeedError::shape(format!(
                "transpose needs rank >= 2, got {:?}",
                self.shape
            )));
        }
        let mut axes: Vec<usize> = (0..nd).collect();
        axes.swap(nd - 2, nd - 1);
        self.permute(&axes)
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

/// Inverse of a permutation.
pub(crate) fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

// ---------------------------------------------------------------------------
// Matrix products.

/// Leading-dimension layout of a batched product `a [P.., m, k] x b [Q.., k, n]`
/// where `Q` is a suffix of `P` (the missing prefix is broadcast).
#[derive(Clone, Copy, Debug)]
pub(crate) struct MatmulDims {
    pub batch_a: usize,
    pub batch_b: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

pub(crate) fn matmul_dims(a: &[usize], b: &[usize], b_transposed: bool) -> Result<MatmulDims> {
    let err = || {
        SeedError::shape(format!(
            "matmul of {a:?} and {b:?}{}",
            if b_transposed { " (b transposed)" } else { "" }
        ))
    };
    if a.len() < 2 || b.len() < 2 {
        return Err(err());
    }
    let (a_lead, a_mat) = a.split_at(a.len() - 2);
    let (b_lead, b_mat) = b.split_at(b.len() - 2);
    if b_lead.len() > a_lead.len() || !a_lead.ends_with(b_lead) {
        return Err(err());
    }
    let (m, k) = (a_mat[0], a_mat[1]);
    let (kb, n) = if b_transposed {
        (b_mat[1], b_mat[0])
    } else {
        (b_mat[0], b_mat[1])
    };
    if k != kb {
        return Err(err());
    }
    Ok(MatmulDims {
        batch_a: a_lead.iter().product(),
        batch_b: b_lead.iter().product(),
        m,
        k,
        n,
    })
}

/// `c (m x n) += a (m x k) * b (k x n)`
pub(crate) fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += aip * bv;
            }
        }
    }
}

/// `c (m x n) += a (m x k) * b^T` with `b` stored `n x k`.
pub(crate) fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let dot: f64 = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            c[i * n + j] += dot;
        }
    }
}

/// `c (m x n) += a^T * b` with `a` stored `k x m` and `b` stored `k x n`.
pub(crate) fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            if api == 0.0 {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += api * bv;
            }
        }
    }
}

const PAR_THRESHOLD: usize = 1 << 15;

/// Runs `f(batch_index, out_chunk)` over equally sized output chunks, in
/// parallel when the problem is large. Each chunk is computed independently,
/// so results do not depend on the thread count.
pub(crate) fn for_each_batch(
    out: &mut [f64],
    chunk: usize,
    work: usize,
    f: impl Fn(usize, &mut [f64]) + Sync + Send,
) {
    use rayon::prelude::*;
    if chunk == 0 {
        return;
    }
    if work >= PAR_THRESHOLD && rayon::current_num_threads() > 1 {
        out.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    } else {
        out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

/// Batched matrix product. `b`'s leading dimensions must match `a`'s
/// trailing leading dimensions; any extra leading dimensions of `a` are
/// broadcast over.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let d = matmul_dims(a.shape(), b.shape(), false)?;
    let mut shape = a.shape()[..a.ndim() - 2].to_vec();
    shape.extend([d.m, d.n]);
    let mut out = vec![0.0; d.batch_a * d.m * d.n];
    let (ad, bd) = (a.data(), b.data());
    for_each_batch(&mut out, d.m * d.n, d.batch_a * d.m * d.k * d.n, |i, c| {
        let j = i % d.batch_b;
        gemm_nn(
            d.m,
            d.k,
            d.n,
            &ad[i * d.m * d.k..(i + 1) * d.m * d.k],
            &bd[j * d.k * d.n..(j + 1) * d.k * d.n],
            c,
        );
    });
    Tensor::new(shape, out)
}

/// `a x b^T` over matching leading dimensions: `a [L.., m, k]`, `b [L.., n, k]`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let d = matmul_dims(a.shape(), b.shape(), true)?;
    let mut shape = a.shape()[..a.ndim() - 2].to_vec();
    shape.extend([d.m, d.n]);
    let mut out = vec![0.0; d.batch_a * d.m * d.n];
    let (ad, bd) = (a.data(), b.data());
    for_each_batch(&mut out, d.m * d.n, d.batch_a * d.m * d.k * d.n, |i, c| {
        let j = i % d.batch_b;
        gemm_nt(
            d.m,
            d.k,
            d.n,
            &ad[i * d.m * d.k..(i + 1) * d.m * d.k],
            &bd[j * d.n * d.k..(j + 1) * d.n * d.k],
            c,
        );
    });
    Tensor::new(shape, out)
}

/// Numerically stable softmax along `axis`.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.ndim() {
        return Err(SeedError::shape(format!(
            "softmax axis {axis} out of range for {:?}",
            x.shape()
        )));
    }
    if !x.all_finite() {
        return Err(SeedError::Numeric("softmax of non-finite input".into()));
    }
    let last = x.ndim() - 1;
    if axis == last {
        return Ok(softmax_last(x));
    }
    let mut axes: Vec<usize> = (0..x.ndim()).collect();
    axes.swap(axis, last);
    let moved = softmax_last(&x.permute(&axes)?);
    moved.permute(&axes)
}

pub(crate) fn softmax_last(x: &Tensor) -> Tensor {
    let n = x.last_dim();
    let mut out = x.clone();
    if n == 0 {
        return out;
    }
    for row in out.data_mut().chunks_mut(n) {
        softmax_in_place(row);
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
