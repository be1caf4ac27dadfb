//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the tape in reverse and accumulates gradients additively, so a
//! value used in several places receives the sum of its contributions.

use crate::error::{Result, SeedError};

use super::tensor::{
    gemm_nn, gemm_nt, gemm_tn, inverse_permutation, matmul, matmul_dims, matmul_nt, softmax_last,
    Tensor,
};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation whose backward rule is supplied by the caller.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Gradients for each input. `needs[i]` is false when input `i` does not
    /// require a gradient; such entries may be returned as `None`.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddSuffix(Var, Var),
    Affine(Var, f64),
    Matmul(Var, Var),
    MatmulNt(Var, Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Tanh(Var),
    Sigmoid(Var),
    Silu(Var),
    Abs(Var),
    Softmax(Var),
    ScaleRows(Var, Var),
    ConcatLast(Var, Var),
    SumAll(Var),
    MeanAll(Var),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(SeedError::shape(format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    // -- elementwise ------------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// `a + b` where `b`'s shape is a suffix of `a`'s (bias-style broadcast
    /// over leading dimensions).
    pub fn add_suffix(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.ndim() > av.ndim() || !av.shape().ends_with(bv.shape()) {
            return Err(SeedError::shape(format!(
                "add_suffix: {:?} is not a suffix of {:?}",
                bv.shape(),
                av.shape()
            )));
        }
        let mut out = av.clone();
        let n = bv.numel();
        if n > 0 {
            for chunk in out.data_mut().chunks_mut(n) {
                for (o, &x) in chunk.iter_mut().zip(bv.data()) {
                    *o += x;
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::AddSuffix(a, b), rg))
    }

    /// `scale * a + offset`.
    pub fn affine(&mut self, a: Var, scale: f64, offset: f64) -> Var {
        let out = self.value(a).map(|x| scale * x + offset);
        let rg = self.rg(a);
        self.push(out, Op::Affine(a, scale), rg)
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Var {
        self.affine(a, scale, 0.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * sigmoid(x));
        let rg = self.rg(a);
        self.push(out, Op::Silu(a), rg)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        let rg = self.rg(a);
        self.push(out, Op::Abs(a), rg)
    }

    // -- structural --------------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let out = self.value(a).permute(axes)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Permute(a, axes.to_vec()), rg))
    }

    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (da, db) = (av.last_dim(), bv.last_dim());
        if av.ndim() == 0
            || av.ndim() != bv.ndim()
            || av.shape()[..av.ndim() - 1] != bv.shape()[..bv.ndim() - 1]
        {
            return Err(SeedError::shape(format!(
                "concat_last: {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let rows = av.numel() / da.max(1);
        let mut data = Vec::with_capacity(av.numel() + bv.numel());
        for r in 0..rows {
            data.extend_from_slice(&av.data()[r * da..(r + 1) * da]);
            data.extend_from_slice(&bv.data()[r * db..(r + 1) * db]);
        }
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = da + db;
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::ConcatLast(a, b), rg))
    }

    // -- linear algebra ----------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matmul(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Matmul(a, b), rg))
    }

    /// `a x b^T` on the last two axes.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matmul_nt(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatmulNt(a, b), rg))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if !av.all_finite() {
            return Err(SeedError::Numeric("softmax of non-finite input".into()));
        }
        let out = softmax_last(av);
        let rg = self.rg(a);
        Ok(self.push(out, Op::Softmax(a), rg))
    }

    /// `x[.., d] * w[..]`: scales each last-axis row of `x` by one entry of `w`.
    pub fn scale_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.ndim() == 0 || xv.shape()[..xv.ndim() - 1] != *wv.shape() {
            return Err(SeedError::shape(format!(
                "scale_rows: {:?} by {:?}",
                xv.shape(),
                wv.shape()
            )));
        }
        let d = xv.last_dim();
        let mut out = xv.clone();
        if d > 0 {
            for (row, &s) in out.data_mut().chunks_mut(d).zip(wv.data()) {
                row.iter_mut().for_each(|v| *v *= s);
            }
        }
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(out, Op::ScaleRows(x, w), rg))
    }

    // -- reductions --------------------------------------------------------

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Tensor::scalar(v.sum() / v.numel().max(1) as f64);
        let rg = self.rg(a);
        self.push(out, Op::MeanAll(a), rg)
    }

    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Var {
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(output, Op::Custom(inputs.to_vec(), op), rg)
    }

    // -- backward ----------------------------------------------------------

    /// Propagates from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(SeedError::shape(format!(
                "backward needs a scalar loss, got {:?}",
                lv.shape()
            )));
        }
        self.backward_with(loss, Tensor::full(lv.shape(), 1.0))
    }

    /// Propagates an explicit upstream gradient for `out`.
    pub fn backward_with(&self, out: Var, seed: Tensor) -> Result<Gradients> {
        same_shape("backward seed", self.value(out), &seed)?;
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(out.0 + 1);
        grads.resize_with(out.0 + 1, || None);
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (v, dg) in self.node_backward(node, &g)? {
                if !self.rg(v) {
                    continue;
                }
                accumulate(&mut grads[v.0], dg)?;
            }
        }
        Ok(Gradients { grads })
    }

    fn node_backward(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let val = |v: Var| self.value(v);
        let y = &node.value;
        let mut out = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Sub(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.map(|x| -x)));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    out.push((*a, g.zip_map(val(*b), |x, y| x * y)?));
                }
                if self.rg(*b) {
                    out.push((*b, g.zip_map(val(*a), |x, y| x * y)?));
                }
            }
            Op::AddSuffix(a, b) => {
                out.push((*a, g.clone()));
                if self.rg(*b) {
                    let bv = val(*b);
                    let mut db = Tensor::zeros(bv.shape());
                    let n = bv.numel();
                    if n > 0 {
                        for chunk in g.data().chunks(n) {
                            for (d, &x) in db.data_mut().iter_mut().zip(chunk) {
                                *d += x;
                            }
                        }
                    }
                    out.push((*b, db));
                }
            }
            Op::Affine(a, s) => out.push((*a, g.map(|x| x * s))),
            Op::Matmul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let d = matmul_dims(av.shape(), bv.shape(), false)?;
                let (mk, kn, mn) = (d.m * d.k, d.k * d.n, d.m * d.n);
                if self.rg(*a) {
                    let mut da = vec![0.0; av.numel()];
                    for i in 0..d.batch_a {
                        let j = i % d.batch_b;
                        gemm_nt(
                            d.m,
                            d.n,
                            d.k,
                            &g.data()[i * mn..(i + 1) * mn],
                            &bv.data()[j * kn..(j + 1) * kn],
                            &mut da[i * mk..(i + 1) * mk],
                        );
                    }
                    out.push((*a, Tensor::new(av.shape().to_vec(), da)?));
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; bv.numel()];
                    for i in 0..d.batch_a {
                        let j = i % d.batch_b;
                        gemm_tn(
                            d.k,
                            d.m,
                            d.n,
                            &av.data()[i * mk..(i + 1) * mk],
                            &g.data()[i * mn..(i + 1) * mn],
                            &mut db[j * kn..(j + 1) * kn],
                        );
                    }
                    out.push((*b, Tensor::new(bv.shape().to_vec(), db)?));
                }
            }
            Op::MatmulNt(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let d = matmul_dims(av.shape(), bv.shape(), true)?;
                let (mk, nk, mn) = (d.m * d.k, d.n * d.k, d.m * d.n);
                if self.rg(*a) {
                    let mut da = vec![0.0; av.numel()];
                    for i in 0..d.batch_a {
                        let j = i % d.batch_b;
                        gemm_nn(
                            d.m,
                            d.n,
                            d.k,
                            &g.data()[i * mn..(i + 1) * mn],
                            &bv.data()[j * nk..(j + 1) * nk],
                            &mut da[i * mk..(i + 1) * mk],
                        );
                    }
                    out.push((*a, Tensor::new(av.shape().to_vec(), da)?));
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; bv.numel()];
                    for i in 0..d.batch_a {
                        let j = i % d.batch_b;
                        gemm_tn(
                            d.n,
                            d.m,
                            d.k,
                            &g.data()[i * mn..(i + 1) * mn],
                            &av.data()[i * mk..(i + 1) * mk],
                            &mut db[j * nk..(j + 1) * nk],
                        );
                    }
                    out.push((*b, Tensor::new(bv.shape().to_vec(), db)?));
                }
            }
            Op::Reshape(a) => out.push((*a, g.reshape(val(*a).shape())?)),
            Op::Permute(a, axes) => out.push((*a, g.permute(&inverse_permutation(axes))?)),
            Op::Tanh(a) => out.push((*a, g.zip_map(y, |g, y| g * (1.0 - y * y))?)),
            Op::Sigmoid(a) => out.push((*a, g.zip_map(y, |g, y| g * y * (1.0 - y))?)),
            Op::Silu(a) => {
                let dx = g.zip_map(val(*a), |g, x| {
                    let s = sigmoid(x);
                    g * s * (1.0 + x * (1.0 - s))
                })?;
                out.push((*a, dx));
            }
            Op::Abs(a) => {
                let dx = g.zip_map(val(*a), |g, x| {
                    if x > 0.0 {
                        g
                    } else if x < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                })?;
                out.push((*a, dx));
            }
            Op::Softmax(a) => {
                let n = y.last_dim();
                let mut dx = g.clone();
                if n > 0 {
                    for (drow, yrow) in dx.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
                        let dot: f64 = drow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for (d, &yv) in drow.iter_mut().zip(yrow) {
                            *d = yv * (*d - dot);
                        }
                    }
                }
                out.push((*a, dx));
            }
            Op::ScaleRows(x, w) => {
                let (xv, wv) = (val(*x), val(*w));
                let d = xv.last_dim();
                if self.rg(*x) {
                    let mut dx = g.clone();
                    if d > 0 {
                        for (row, &s) in dx.data_mut().chunks_mut(d).zip(wv.data()) {
                            row.iter_mut().for_each(|v| *v *= s);
                        }
                    }
                    out.push((*x, dx));
                }
                if self.rg(*w) {
                    let mut dw = Tensor::zeros(wv.shape());
                    if d > 0 {
                        for ((o, grow), xrow) in dw
                            .data_mut()
                            .iter_mut()
                            .zip(g.data().chunks(d))
                            .zip(xv.data().chunks(d))
                        {
                            *o = grow.iter().zip(xrow).map(|(a, b)| a * b).sum();
                        }
                    }
                    out.push((*w, dw));
                }
            }
            Op::ConcatLast(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (da, db) = (av.last_dim(), bv.last_dim());
                let rows = av.numel() / da.max(1);
                let mut ga = Vec::with_capacity(av.numel());
                let mut gb = Vec::with_capacity(bv.numel());
                for r in 0..rows {
                    let row = &g.data()[r * (da + db)..(r + 1) * (da + db)];
                    ga.extend_from_slice(&row[..da]);
                    gb.extend_from_slice(&row[da..]);
                }
                out.push((*a, Tensor::new(av.shape().to_vec(), ga)?));
                out.push((*b, Tensor::new(bv.shape().to_vec(), gb)?));
            }
            Op::SumAll(a) => out.push((*a, Tensor::full(val(*a).shape(), g.item()))),
            Op::MeanAll(a) => {
                let av = val(*a);
                out.push((*a, Tensor::full(av.shape(), g.item() / av.numel().max(1) as f64)));
            }
            Op::Custom(inputs, op) => {
                let vals: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                let needs: Vec<bool> = inputs.iter().map(|&v| self.rg(v)).collect();
                let grads = op.backward(&vals, y, g, &needs);
                if grads.len() != inputs.len() {
                    return Err(SeedError::Internal(format!(
                        "{} returned {} gradients for {} inputs",
                        op.name(),
                        grads.len(),
                        inputs.len()
                    )));
                }
                for (v, dg) in inputs.iter().zip(grads) {
                    if let Some(dg) = dg {
                        out.push((*v, dg));
                    }
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) -> Result<()> {
    match slot {
        None => *slot = Some(g),
        Some(acc) => {
            same_shape("gradient accumulation", acc, &g)?;
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }
    Ok(())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ---------------------------------------------------------------------------
// Layer normalization over the last axis.

const LN_EPS: f64 = 1e-5;

struct LayerNormOp {
    xhat: Tensor,
    rstd: Vec<f64>,
}

impl CustomOp for LayerNormOp {
    fn name(&self) -> &'static str {
        "layer_norm"
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let gamma = inputs[1];
        let d = gamma.numel();
        let xhat = self.xhat.data();
        let mut dgamma = vec![0.0; d];
        let mut dbeta = vec![0.0; d];
        let mut dx = vec![0.0; grad.numel()];
        for (r, grow) in grad.data().chunks(d).enumerate() {
            let xrow = &xhat[r * d..(r + 1) * d];
            let mut mean_dxhat = 0.0;
            let mut mean_dxhat_xhat = 0.0;
            for j in 0..d {
                dgamma[j] += grow[j] * xrow[j];
                dbeta[j] += grow[j];
                let dxh = grow[j] * gamma.data()[j];
                mean_dxhat += dxh;
                mean_dxhat_xhat += dxh * xrow[j];
            }
            mean_dxhat /= d as f64;
            mean_dxhat_xhat /= d as f64;
            let rstd = self.rstd[r];
            for j in 0..d {
                let dxh = grow[j] * gamma.data()[j];
                dx[r * d + j] = rstd * (dxh - mean_dxhat - xrow[j] * mean_dxhat_xhat);
            }
        }
        let shape = grad.shape().to_vec();
        vec![
            needs[0].then(|| Tensor::new(shape, dx).unwrap()),
            needs[1].then(|| Tensor::new(vec![d], dgamma).unwrap()),
            needs[2].then(|| Tensor::new(vec![d], dbeta).unwrap()),
        ]
    }
}

impl Tape {
    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let d = xv.last_dim();
        if gv.shape() != [d] || bv.shape() != [d] || d == 0 {
            return Err(SeedError::shape(format!(
                "layer_norm: x {:?}, gamma {:?}, beta {:?}",
                xv.shape(),
                gv.shape(),
                bv.shape()
            )));
        }
        let rows = xv.numel() / d;
        let mut xhat = vec![0.0; xv.numel()];
        let mut out = vec![0.0; xv.numel()];
        let mut rstds = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let rstd = 1.0 / (var + LN_EPS).sqrt();
            rstds.push(rstd);
            for j in 0..d {
                let h = (row[j] - mean) * rstd;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let shape = xv.shape().to_vec();
        let op = LayerNormOp {
            xhat: Tensor::new(shape.clone(), xhat)?,
            rstd: rstds,
        };
        Ok(self.custom(&[x, gamma, beta], Tensor::new(shape, out)?, Box::new(op)))
    }
}
