//! Cross-variable pathway: local spatio-temporal windows, signed graphs
//! with a learnable bilinear distance, KNN sparsification, graph
//! convolution and overlap pooling.
//!
//! Node layout inside a window is variable-major: with window size `s`,
//! node `c * s + j` of window `w` is patch `w + j` of variable `c`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SeedError};
use crate::numeric::{CustomOp, RngState, Tape, Tensor, Var};
use crate::params::{glorot, Bound, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphVariant {
    /// `tanh(s)` normalized by the row L1 norm.
    Tanh,
    /// Softmax over `|s|`, re-signed by `sign(s)`.
    Softmax,
    /// Ordinary softmax over raw scores (non-negative weights).
    Plain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pool {
    Mean,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GcnActivation {
    Silu,
    Identity,
}

/// How patches are grouped into graph windows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Windowing {
    /// Adjacent patch pairs, stride 1.
    Pairs,
    /// One patch per window: variables at the same step only.
    Single,
    /// One window spanning every patch, fully connected.
    Global,
}

impl Windowing {
    pub fn size(self, n_patches: usize) -> usize {
        match self {
            Windowing::Pairs => 2,
            Windowing::Single => 1,
            Windowing::Global => n_patches,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CseConfig {
    pub heads: usize,
    /// `None` picks `max(2, ceil(n / 2))`.
    pub knn_k: Option<usize>,
    pub variant: GraphVariant,
    pub pool: Pool,
    pub windowing: Windowing,
    pub keep_self: bool,
    pub activation: GcnActivation,
    pub per_head_distance: bool,
}

impl Default for CseConfig {
    fn default() -> Self {
        Self {
            heads: 4,
            knn_k: None,
            variant: GraphVariant::Tanh,
            pool: Pool::Mean,
            windowing: Windowing::Pairs,
            keep_self: true,
            activation: GcnActivation::Silu,
            per_head_distance: false,
        }
    }
}

impl CseConfig {
    /// Neighbours kept per row for windows of `n` nodes.
    pub fn k_for(&self, n: usize) -> Result<usize> {
        if self.windowing == Windowing::Global {
            return Ok(n);
        }
        match self.knn_k {
            Some(k) if k == 0 || k > n => Err(SeedError::config(format!(
                "knn_k {k} outside 1..={n} for windows of {n} nodes"
            ))),
            Some(k) => Ok(k),
            None => Ok(2usize.max(n.div_ceil(2)).min(n)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CseParams {
    /// Bilinear distance form, `[d_h, d_h]` or `[H, d_h, d_h]` per head.
    pub q: ParamId,
    /// Per-head GCN weights `[H, d_h, d_h]`.
    pub gcn_weight: ParamId,
    pub gcn_bias: ParamId,
    pub d_model: usize,
    pub config: CseConfig,
}

impl CseParams {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut RngState,
        prefix: &str,
        d_model: usize,
        config: CseConfig,
    ) -> Result<Self> {
        let h = config.heads;
        if h == 0 || h > d_model || !d_model.is_multiple_of(h) {
            return Err(SeedError::config(format!(
                "{h} graph heads do not divide d_model {d_model}"
            )));
        }
        let dh = d_model / h;
        let q_shape = if config.per_head_distance { vec![h, dh, dh] } else { vec![dh, dh] };
        let q = store.add(format!("{prefix}.q"), glorot(rng, &q_shape, dh, dh));
        let gcn_weight = store.add(format!("{prefix}.gcn_weight"), glorot(rng, &[h, dh, dh], dh, dh));
        let gcn_bias = store.add(format!("{prefix}.gcn_bias"), Tensor::zeros(&[d_model]));
        Ok(Self {
            q,
            gcn_weight,
            gcn_bias,
            d_model,
            config,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.config.heads
    }
}

// ---------------------------------------------------------------------------
// Windows

/// One graph window: `n = C * size` nodes of width `D`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalWindow {
    /// Zero-based index of the first patch covered.
    pub index: usize,
    pub size: usize,
    pub n_vars: usize,
    pub nodes: Tensor,
}

impl LocalWindow {
    pub fn n_nodes(&self) -> usize {
        self.n_vars * self.size
    }
}

fn tokens_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [c, n, d] => Ok((*c, *n, *d)),
        _ => Err(SeedError::shape(format!("expected C x N x D tokens, got {shape:?}"))),
    }
}

fn check_window_size(n_patches: usize, size: usize) -> Result<usize> {
    if size == 0 || n_patches < size.max(1) {
        return Err(SeedError::config(format!(
            "{n_patches} patches cannot form windows of size {size}; \
             lookback and patch length are too coarse"
        )));
    }
    Ok(n_patches - size + 1)
}

/// Splits `C x N x D` tokens into the `N - 1` overlapping windows of two
/// adjacent patches.
pub fn make_windows(tokens: &Tensor) -> Result<Vec<LocalWindow>> {
    make_windows_sized(tokens, 2)
}

pub fn make_windows_sized(tokens: &Tensor, size: usize) -> Result<Vec<LocalWindow>> {
    let (c, n, d) = tokens_dims(tokens.shape())?;
    let count = check_window_size(n, size)?;
    let x = Tensor::new(vec![1, c, n, d], tokens.data().to_vec())?;
    let unfolded = unfold_forward(&x, size);
    let per = c * size * d;
    Ok((0..count)
        .map(|w| LocalWindow {
            index: w,
            size,
            n_vars: c,
            nodes: Tensor::new(vec![c * size, d], unfolded[w * per..(w + 1) * per].to_vec()).unwrap(),
        })
        .collect())
}

fn unfold_forward(x: &Tensor, size: usize) -> Vec<f64> {
    let s = x.shape();
    let (b, c, n, d) = (s[0], s[1], s[2], s[3]);
    let w_count = n - size + 1;
    let mut out = Vec::with_capacity(b * w_count * c * size * d);
    for bi in 0..b {
        for w in 0..w_count {
            for ci in 0..c {
                for j in 0..size {
                    let start = ((bi * c + ci) * n + w + j) * d;
                    out.extend_from_slice(&x.data()[start..start + d]);
                }
            }
        }
    }
    out
}

struct UnfoldOp {
    input_shape: Vec<usize>,
    size: usize,
}

impl CustomOp for UnfoldOp {
    fn name(&self) -> &'static str {
        "window_unfold"
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        if !needs[0] {
            return vec![None];
        }
        let s = &self.input_shape;
        let (b, c, n, d) = (s[0], s[1], s[2], s[3]);
        let size = self.size;
        let mut dx = vec![0.0; b * c * n * d];
        let mut src = grad.data().chunks(d);
        for bi in 0..b {
            for w in 0..n - size + 1 {
                for ci in 0..c {
                    for j in 0..size {
                        let start = ((bi * c + ci) * n + w + j) * d;
                        let g = src.next().unwrap();
                        for (a, v) in dx[start..start + d].iter_mut().zip(g) {
                            *a += v;
                        }
                    }
                }
            }
        }
        vec![Some(Tensor::new(s.clone(), dx).unwrap())]
    }
}

/// `[B, C, N, D] -> [B, W, C * size, D]`.
pub fn unfold_var(tape: &mut Tape, x: Var, size: usize) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 4 {
        return Err(SeedError::shape(format!("unfold expects [B, C, N, D], got {shape:?}")));
    }
    let (b, c, n, d) = (shape[0], shape[1], shape[2], shape[3]);
    let count = check_window_size(n, size)?;
    let out = Tensor::new(vec![b, count, c * size, d], unfold_forward(tape.value(x), size))?;
    Ok(tape.custom(
        &[x],
        out,
        Box::new(UnfoldOp {
            input_shape: shape,
            size,
        }),
    ))
}

struct FoldOp {
    input_shape: Vec<usize>,
    n_vars: usize,
    n_patches: usize,
    pool: Pool,
    /// For max pooling: flat input offset chosen for each output element.
    argmax: Vec<usize>,
}

impl CustomOp for FoldOp {
    fn name(&self) -> &'static str {
        "overlap_pool"
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        if !needs[0] {
            return vec![None];
        }
        let s = &self.input_shape;
        let mut dx = vec![0.0; s.iter().product()];
        match self.pool {
            Pool::Max => {
                for (&src, g) in self.argmax.iter().zip(grad.data()) {
                    dx[src] += g;
                }
            }
            Pool::Mean => {
                let (b, w_count, nodes, d) = (s[0], s[1], s[2], s[3]);
                let (c, n) = (self.n_vars, self.n_patches);
                let size = nodes / c;
                for bi in 0..b {
                    for w in 0..w_count {
                        for ci in 0..c {
                            for j in 0..size {
                                let p = w + j;
                                let cover = cover_count(p, size, w_count) as f64;
                                let src = (((bi * w_count + w) * nodes) + ci * size + j) * d;
                                let dst = ((bi * c + ci) * n + p) * d;
                                for e in 0..d {
                                    dx[src + e] += grad.data()[dst + e] / cover;
                                }
                            }
                        }
                    }
                }
            }
        }
        vec![Some(Tensor::new(s.clone(), dx).unwrap())]
    }
}

/// Number of windows covering patch `p`.
fn cover_count(p: usize, size: usize, w_count: usize) -> usize {
    let lo = p.saturating_sub(size - 1);
    let hi = p.min(w_count - 1);
    hi + 1 - lo
}

/// `[B, W, C * size, D] -> [B, C, N, D]`, pooling every representation of
/// each patch across the windows that contain it.
pub fn fold_var(tape: &mut Tape, e: Var, n_vars: usize, n_patches: usize, pool: Pool) -> Result<Var> {
    let shape = tape.shape(e).to_vec();
    if shape.len() != 4 || n_vars == 0 || !shape[2].is_multiple_of(n_vars) {
        return Err(SeedError::shape(format!(
            "fold expects [B, W, C * size, D] with C = {n_vars}, got {shape:?}"
        )));
    }
    let (b, w_count, nodes, d) = (shape[0], shape[1], shape[2], shape[3]);
    let size = nodes / n_vars;
    if size == 0 || w_count + size - 1 != n_patches {
        return Err(SeedError::Internal(format!(
            "{w_count} windows of size {size} do not tile {n_patches} patches"
        )));
    }
    let (c, n) = (n_vars, n_patches);
    let ev = tape.value(e).data();
    let mut out = vec![0.0; b * c * n * d];
    let mut argmax = Vec::new();
    match pool {
        Pool::Mean => {
            for bi in 0..b {
                for w in 0..w_count {
                    for ci in 0..c {
                        for j in 0..size {
                            let p = w + j;
                            let cover = cover_count(p, size, w_count) as f64;
                            let src = (((bi * w_count + w) * nodes) + ci * size + j) * d;
                            let dst = ((bi * c + ci) * n + p) * d;
                            for k in 0..d {
                                out[dst + k] += ev[src + k] / cover;
                            }
                        }
                    }
                }
            }
        }
        Pool::Max => {
            argmax = vec![0; out.len()];
            for bi in 0..b {
                for ci in 0..c {
                    for p in 0..n {
                        let dst = ((bi * c + ci) * n + p) * d;
                        let lo = p.saturating_sub(size - 1);
                        let hi = p.min(w_count - 1);
                        for k in 0..d {
                            let mut best = f64::NEG_INFINITY;
                            let mut at = 0;
                            for w in lo..=hi {
                                let src = (((bi * w_count + w) * nodes) + ci * size + (p - w)) * d + k;
                                if ev[src] > best {
                                    best = ev[src];
                                    at = src;
                                }
                            }
                            out[dst + k] = best;
                            argmax[dst + k] = at;
                        }
                    }
                }
            }
        }
    }
    let out = Tensor::new(vec![b, c, n, d], out)?;
    Ok(tape.custom(
        &[e],
        out,
        Box::new(FoldOp {
            input_shape: shape,
            n_vars,
            n_patches,
            pool,
            argmax,
        }),
    ))
}

/// Representation of patch `k` for every variable from the two pair
/// windows that contain it: slot 2 of window `k - 1` (`prev`) and slot 1 of
/// window `k` (`curr`). Boundary patches pass a single side.
pub fn overlap_pool(prev: Option<&Tensor>, curr: Option<&Tensor>, n_vars: usize, pool: Pool) -> Result<Tensor> {
    let slot = |t: &Tensor, j: usize| -> Result<Tensor> {
        let (nodes, d) = match t.shape() {
            [nodes, d] if *nodes == 2 * n_vars => (*nodes, *d),
            s => {
                return Err(SeedError::Internal(format!(
                    "window output {s:?} is not {} nodes wide",
                    2 * n_vars
                )))
            }
        };
        let _ = nodes;
        let mut out = Vec::with_capacity(n_vars * d);
        for c in 0..n_vars {
            out.extend_from_slice(&t.data()[(2 * c + j) * d..(2 * c + j + 1) * d]);
        }
        Tensor::new(vec![n_vars, d], out)
    };
    match (prev, curr) {
        (Some(p), Some(c)) => {
            let (a, b) = (slot(p, 1)?, slot(c, 0)?);
            if a.shape() != b.shape() {
                return Err(SeedError::Internal("adjacent windows disagree in width".into()));
            }
            a.zip_map(&b, |x, y| match pool {
                Pool::Mean => 0.5 * (x + y),
                Pool::Max => x.max(y),
            })
        }
        (Some(p), None) => slot(p, 1),
        (None, Some(c)) => slot(c, 0),
        (None, None) => Err(SeedError::Internal("overlap pooling with no window".into())),
    }
}

// ---------------------------------------------------------------------------
// Graphs

/// Per-head signed adjacency for one or more windows, `[.., H, n, n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SignedGraph {
    pub weights: Tensor,
    /// Retention mask in the same layout as `weights`.
    pub mask: Vec<bool>,
    pub variant: GraphVariant,
}

impl SignedGraph {
    pub fn n_nodes(&self) -> usize {
        self.weights.last_dim()
    }

    pub fn mask_tensor(&self) -> Tensor {
        Tensor::new(
            self.weights.shape().to_vec(),
            self.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap()
    }
}

/// `sign` with `sign(0) = +1`.
fn sign_plus(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

struct SignSoftmaxOp;

impl CustomOp for SignSoftmaxOp {
    fn name(&self) -> &'static str {
        "sign_softmax"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        if !needs[0] {
            return vec![None];
        }
        let n = output.last_dim();
        let mut dx = vec![0.0; output.numel()];
        let rows = inputs[0].data().chunks(n).zip(output.data().chunks(n)).zip(grad.data().chunks(n));
        for (r, ((s, a), g)) in rows.enumerate() {
            // p = |a|, u = g * sign(s); ds_j = sign_j p_j (u_j - sum_i u_i p_i)
            let dot: f64 = (0..n).map(|i| g[i] * sign_plus(s[i]) * a[i].abs()).sum();
            for j in 0..n {
                let sj = sign_plus(s[j]);
                dx[r * n + j] = sj * a[j].abs() * (g[j] * sj - dot);
            }
        }
        vec![Some(Tensor::new(output.shape().to_vec(), dx).unwrap())]
    }
}

fn sign_softmax_forward(s: &Tensor) -> Result<Tensor> {
    if !s.all_finite() {
        return Err(SeedError::Numeric("graph scores are not finite".into()));
    }
    let n = s.last_dim();
    let mut out = s.clone();
    for row in out.data_mut().chunks_mut(n) {
        let max = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let z: f64 = row.iter().map(|v| (v.abs() - max).exp()).sum();
        for v in row.iter_mut() {
            *v = sign_plus(*v) * (v.abs() - max).exp() / z;
        }
    }
    Ok(out)
}

struct L1RowsOp;

impl CustomOp for L1RowsOp {
    fn name(&self) -> &'static str {
        "l1_normalize_rows"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        if !needs[0] {
            return vec![None];
        }
        let t = inputs[0];
        let n = t.last_dim();
        let mut dx = vec![0.0; t.numel()];
        for (r, (row, g)) in t.data().chunks(n).zip(grad.data().chunks(n)).enumerate() {
            let norm: f64 = row.iter().map(|v| v.abs()).sum();
            if norm <= f64::MIN_POSITIVE {
                continue;
            }
            let gt: f64 = row.iter().zip(g).map(|(a, b)| a * b).sum();
            for j in 0..n {
                let sgn = if row[j] > 0.0 {
                    1.0
                } else if row[j] < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                dx[r * n + j] = g[j] / norm - sgn * gt / (norm * norm);
            }
        }
        vec![Some(Tensor::new(t.shape().to_vec(), dx).unwrap())]
    }
}

fn l1_rows_forward(t: &Tensor) -> Tensor {
    let n = t.last_dim();
    let mut out = t.clone();
    for row in out.data_mut().chunks_mut(n) {
        let norm: f64 = row.iter().map(|v| v.abs()).sum();
        if norm <= f64::MIN_POSITIVE {
            row.iter_mut().for_each(|v| *v = 0.0);
        } else {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

/// Graph weights from raw scores `[.., n, n]` (differentiable, unmasked).
pub fn graph_var(tape: &mut Tape, scores: Var, variant: GraphVariant) -> Result<Var> {
    match variant {
        GraphVariant::Tanh => {
            let t = tape.tanh(scores);
            let out = l1_rows_forward(tape.value(t));
            Ok(tape.custom(&[t], out, Box::new(L1RowsOp)))
        }
        GraphVariant::Softmax => {
            let out = sign_softmax_forward(tape.value(scores))?;
            Ok(tape.custom(&[scores], out, Box::new(SignSoftmaxOp)))
        }
        GraphVariant::Plain => tape.softmax(scores),
    }
}

fn graph_from_scores(scores: &Tensor, variant: GraphVariant) -> Result<SignedGraph> {
    if scores.ndim() < 2 || scores.shape()[scores.ndim() - 2] != scores.last_dim() {
        return Err(SeedError::shape(format!("scores {:?} are not square", scores.shape())));
    }
    let mut tape = Tape::new();
    let s = tape.constant(scores.clone());
    let g = graph_var(&mut tape, s, variant)?;
    let weights = tape.value(g).clone();
    Ok(SignedGraph {
        mask: vec![true; weights.numel()],
        weights,
        variant,
    })
}

pub fn sign_softmax_graph(scores: &Tensor) -> Result<SignedGraph> {
    graph_from_scores(scores, GraphVariant::Softmax)
}

pub fn tanh_l1_graph(scores: &Tensor) -> Result<SignedGraph> {
    graph_from_scores(scores, GraphVariant::Tanh)
}

pub fn plain_softmax_graph(scores: &Tensor) -> Result<SignedGraph> {
    graph_from_scores(scores, GraphVariant::Plain)
}

/// Retention mask keeping, per row, the `k` entries of largest `|alpha|`
/// among those allowed by `prior`. With `keep_self` the diagonal entry is
/// always kept and counts toward `k`. Ties go to the lower column.
pub fn knn_mask(weights: &Tensor, k: usize, keep_self: bool, prior: Option<&[bool]>) -> Result<Vec<bool>> {
    let n = weights.last_dim();
    if weights.ndim() < 2 || weights.shape()[weights.ndim() - 2] != n {
        return Err(SeedError::shape(format!("graph {:?} is not square", weights.shape())));
    }
    if k == 0 || k > n {
        return Err(SeedError::config(format!("k = {k} outside 1..={n}")));
    }
    let mut mask = vec![false; weights.numel()];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for (r, row) in weights.data().chunks(n).enumerate() {
        let i = r % n;
        let allowed = |j: usize| prior.is_none_or(|p| p[r * n + j]);
        let out = &mut mask[r * n..(r + 1) * n];
        let mut left = k;
        if keep_self && allowed(i) {
            out[i] = true;
            left -= 1;
        }
        order.clear();
        order.extend((0..n).filter(|&j| allowed(j) && !out[j]));
        let rank = |&a: &usize, &b: &usize| row[b].abs().total_cmp(&row[a].abs()).then(a.cmp(&b));
        if left > 0 && left < order.len() {
            order.select_nth_unstable_by(left - 1, rank);
        }
        for &j in order.iter().take(left) {
            out[j] = true;
        }
    }
    Ok(mask)
}

/// Zeroes all but the `k` strongest entries of each row.
pub fn knn_sparsify(graph: &SignedGraph, k: usize, keep_self: bool) -> Result<SignedGraph> {
    let mask = knn_mask(&graph.weights, k, keep_self, Some(&graph.mask))?;
    let data = graph
        .weights
        .data()
        .iter()
        .zip(&mask)
        .map(|(&v, &m)| if m { v } else { 0.0 })
        .collect();
    Ok(SignedGraph {
        weights: Tensor::new(graph.weights.shape().to_vec(), data)?,
        mask,
        variant: graph.variant,
    })
}

// ---------------------------------------------------------------------------
// Distance and graph convolution

/// `nodes [M, n, D] -> [M, H, n, d_h]`.
fn split_heads(tape: &mut Tape, nodes: Var, heads: usize) -> Result<Var> {
    let s = tape.shape(nodes).to_vec();
    let (m, n, d) = (s[0], s[1], s[2]);
    let x = tape.reshape(nodes, &[m, n, heads, d / heads])?;
    tape.permute(x, &[0, 2, 1, 3])
}

fn check_nodes(tape: &Tape, nodes: Var, d_model: usize) -> Result<()> {
    match tape.shape(nodes) {
        [_, _, d] if *d == d_model => Ok(()),
        s => Err(SeedError::shape(format!("expected [M, n, {d_model}] nodes, got {s:?}"))),
    }
}

/// Per-head bilinear scores `s_ij = x_i Q x_j^T` for `nodes [M, n, D]`,
/// giving `[M, H, n, n]`.
pub fn distance_var(tape: &mut Tape, bound: &Bound, params: &CseParams, nodes: Var) -> Result<Var> {
    check_nodes(tape, nodes, params.d_model)?;
    let xh = split_heads(tape, nodes, params.config.heads)?;
    let xq = tape.matmul(xh, bound[params.q])?;
    tape.matmul_nt(xq, xh)
}

/// Graph convolution of `nodes [M, n, D]` over `graph [M, H, n, n]`:
/// per-head aggregation and weights, bias, activation and a residual.
pub fn gcn_var(tape: &mut Tape, bound: &Bound, params: &CseParams, nodes: Var, graph: Var) -> Result<Var> {
    check_nodes(tape, nodes, params.d_model)?;
    let s = tape.shape(nodes).to_vec();
    let h = params.config.heads;
    if tape.shape(graph) != [s[0], h, s[1], s[1]] {
        return Err(SeedError::shape(format!(
            "graph {:?} does not match nodes {s:?} with {h} heads",
            tape.shape(graph)
        )));
    }
    let xh = split_heads(tape, nodes, h)?;
    let agg = tape.matmul(graph, xh)?;
    let z = tape.matmul(agg, bound[params.gcn_weight])?;
    let z = tape.permute(z, &[0, 2, 1, 3])?;
    let z = tape.reshape(z, &s)?;
    let z = tape.add_suffix(z, bound[params.gcn_bias])?;
    let z = match params.config.activation {
        GcnActivation::Silu => tape.silu(z),
        GcnActivation::Identity => z,
    };
    tape.add(z, nodes)
}

/// Graph weights actually used inside [`cse_var`], kept for inspection.
pub struct CseOutput {
    pub output: Var,
    pub graph: Var,
}

/// The full cross-variable pathway on `x [.., C, N, D]`.
pub fn cse_var(tape: &mut Tape, bound: &Bound, params: &CseParams, x: Var) -> Result<CseOutput> {
    let shape = tape.shape(x).to_vec();
    if shape.len() < 3 || shape[shape.len() - 1] != params.d_model {
        return Err(SeedError::shape(format!(
            "spatial input {shape:?} is not [.., C, N, {}]",
            params.d_model
        )));
    }
    let r = shape.len();
    let (c, n, d) = (shape[r - 3], shape[r - 2], shape[r - 1]);
    let b: usize = shape[..r - 3].iter().product();
    let cfg = &params.config;
    let size = cfg.windowing.size(n);
    let w_count = check_window_size(n, size)?;
    let nodes_per = c * size;
    let k = cfg.k_for(nodes_per)?;

    let x4 = tape.reshape(x, &[b, c, n, d])?;
    let win = unfold_var(tape, x4, size)?;
    let nodes = tape.reshape(win, &[b * w_count, nodes_per, d])?;
    let scores = distance_var(tape, bound, params, nodes)?;
    let graph = graph_var(tape, scores, cfg.variant)?;
    let graph = if k < nodes_per {
        let mask = knn_mask(tape.value(graph), k, cfg.keep_self, None)?;
        let mask = Tensor::new(
            tape.shape(graph).to_vec(),
            mask.into_iter().map(|m| if m { 1.0 } else { 0.0 }).collect(),
        )?;
        let mask = tape.constant(mask);
        tape.mul(graph, mask)?
    } else {
        graph
    };
    let e = gcn_var(tape, bound, params, nodes, graph)?;
    let e = tape.reshape(e, &[b, w_count, nodes_per, d])?;
    let pooled = fold_var(tape, e, c, n, cfg.pool)?;
    let output = tape.reshape(pooled, &shape)?;
    Ok(CseOutput { output, graph })
}

// ---------------------------------------------------------------------------
// Tensor-level entry points

fn window_nodes(tape: &mut Tape, window: &LocalWindow) -> Result<Var> {
    let s = window.nodes.shape();
    let nodes = window.nodes.reshape(&[1, s[0], s[1]])?;
    Ok(tape.constant(nodes))
}

/// Scores `[H, n, n]` for one window.
pub fn signed_distance(window: &LocalWindow, store: &ParamStore, params: &CseParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, false);
    let nodes = window_nodes(&mut tape, window)?;
    let s = distance_var(&mut tape, &bound, params, nodes)?;
    let shape = tape.shape(s)[1..].to_vec();
    tape.value(s).reshape(&shape)
}

/// Graph convolution of one window, `n x D`.
pub fn gcn(window: &LocalWindow, graph: &SignedGraph, store: &ParamStore, params: &CseParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, false);
    let nodes = window_nodes(&mut tape, window)?;
    let gshape: Vec<usize> = std::iter::once(1).chain(graph.weights.shape().iter().copied()).collect();
    let g = tape.constant(graph.weights.reshape(&gshape)?);
    let out = gcn_var(&mut tape, &bound, params, nodes, g)?;
    tape.value(out).reshape(window.nodes.shape())
}

/// `C x N x D -> C x N x D` through windows, graphs, GCN and pooling.
pub fn context_spatial_extract(tokens: &Tensor, store: &ParamStore, params: &CseParams) -> Result<Tensor> {
    tokens_dims(tokens.shape())?;
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, false);
    let x = tape.constant(tokens.clone());
    let out = cse_var(&mut tape, &bound, params, x)?;
    Ok(tape.value(out.output).clone())
}
