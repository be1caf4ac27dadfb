//! Per-variable multi-head self-attention over patch tokens.

use crate::error::{Result, SeedError};
use crate::numeric::{RngState, Tape, Tensor, Var};
use crate::params::{glorot, linear, Bound, ParamId, ParamStore};

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub heads: usize,
    pub d_model: usize,
}

impl AttentionParams {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut RngState,
        prefix: &str,
        d_model: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(SeedError::config(format!(
                "{heads} attention heads do not divide d_model {d_model}"
            )));
        }
        let mut mat = |name: &str| {
            store.add(
                format!("{prefix}.{name}"),
                glorot(rng, &[d_model, d_model], d_model, d_model),
            )
        };
        let (wq, wk, wv, wo) = (mat("wq"), mat("wk"), mat("wv"), mat("wo"));
        let mut bias = |name: &str| store.add(format!("{prefix}.{name}"), Tensor::zeros(&[d_model]));
        let (bq, bk, bv, bo) = (bias("bq"), bias("bk"), bias("bv"), bias("bo"));
        Ok(Self {
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
            heads,
            d_model,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

/// Output of [`attention_var`]: the attended tokens and the attention
/// weights `[M, h, N, N]` (`M` = product of the leading axes).
pub struct AttentionOutput {
    pub output: Var,
    pub weights: Var,
}

/// Bidirectional attention along the patch axis of `x [.., N, D]`; every
/// leading index (variable, batch entry) is attended independently.
pub fn attention_var(
    tape: &mut Tape,
    bound: &Bound,
    params: &AttentionParams,
    x: Var,
) -> Result<AttentionOutput> {
    let shape = tape.shape(x).to_vec();
    let (h, d) = (params.heads, params.d_model);
    if shape.len() < 2 || shape[shape.len() - 1] != d {
        return Err(SeedError::shape(format!(
            "attention input {shape:?} does not end in d_model {d}"
        )));
    }
    if h == 0 || d % h != 0 {
        return Err(SeedError::config(format!("{h} heads do not divide {d}")));
    }
    let dk = d / h;
    let n = shape[shape.len() - 2];
    let m: usize = shape[..shape.len() - 2].iter().product();

    let split = |tape: &mut Tape, w: ParamId, b: ParamId| -> Result<Var> {
        let y = linear(tape, x, bound[w], Some(bound[b]))?;
        let y = tape.reshape(y, &[m, n, h, dk])?;
        tape.permute(y, &[0, 2, 1, 3])
    };
    let q = split(tape, params.wq, params.bq)?;
    let k = split(tape, params.wk, params.bk)?;
    let v = split(tape, params.wv, params.bv)?;

    let scores = tape.matmul_nt(q, k)?;
    let scores = tape.scale(scores, 1.0 / (dk as f64).sqrt());
    let weights = tape.softmax(scores)?;
    let heads = tape.matmul(weights, v)?;
    let heads = tape.permute(heads, &[0, 2, 1, 3])?;
    let concat = tape.reshape(heads, &[m, n, d])?;
    let out = linear(tape, concat, bound[params.wo], Some(bound[params.bo]))?;
    let output = tape.reshape(out, &shape)?;
    Ok(AttentionOutput { output, weights })
}

/// Temporal attention on `C x N x D` tokens.
pub fn temporal_attention(tokens: &Tensor, store: &ParamStore, params: &AttentionParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, false);
    let x = tape.constant(tokens.clone());
    let out = attention_var(&mut tape, &bound, params, x)?;
    Ok(tape.value(out.output).clone())
}

/// Attention weights `[C, h, N, N]` for `C x N x D` tokens.
pub fn attention_weights(tokens: &Tensor, store: &ParamStore, params: &AttentionParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, false);
    let x = tape.constant(tokens.clone());
    let out = attention_var(&mut tape, &bound, params, x)?;
    Ok(tape.value(out.weights).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::grad_check;

    fn setup(d: usize, h: usize, seed: u64) -> (ParamStore, AttentionParams) {
        let mut store = ParamStore::new();
        let mut rng = RngState::new(seed);
        let p = AttentionParams::init(&mut store, &mut rng, "attn", d, h).unwrap();
        // non-zero biases so they are exercised
        for id in [p.bq, p.bk, p.bv, p.bo] {
            let b = rng.normal_tensor(&[d], 0.1);
            store.set(id, b).unwrap();
        }
        (store, p)
    }

    #[test]
    fn heads_must_divide_width() {
        let mut store = ParamStore::new();
        let res = AttentionParams::init(&mut store, &mut RngState::new(0), "a", 6, 4);
        assert!(matches!(res, Err(SeedError::Config(_))));
    }

    #[test]
    fn single_patch_returns_value_projection() {
        let (store, p) = setup(4, 2, 1);
        let x = RngState::new(2).normal_tensor(&[3, 1, 4], 1.0);
        let w = attention_weights(&x, &store, &p).unwrap();
        assert!(w.data().iter().all(|v| *v == 1.0));
        let out = temporal_attention(&x, &store, &p).unwrap();
        // out = (x Wv + bv) Wo + bo
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let v = linear(&mut tape, xv, bound[p.wv], Some(bound[p.bv])).unwrap();
        let o = linear(&mut tape, v, bound[p.wo], Some(bound[p.bo])).unwrap();
        for (a, b) in out.data().iter().zip(tape.value(o).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_variables_identical_outputs() {
        let (store, p) = setup(8, 4, 3);
        let row = RngState::new(4).normal_tensor(&[1, 5, 8], 1.0);
        let mut data = row.data().to_vec();
        data.extend_from_slice(row.data());
        let x = Tensor::new(vec![2, 5, 8], data).unwrap();
        let out = temporal_attention(&x, &store, &p).unwrap();
        assert_eq!(&out.data()[..40], &out.data()[40..]);
    }

    #[test]
    fn hand_computed_two_token_case() {
        let mut store = ParamStore::new();
        let eye = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let z = Tensor::zeros(&[2]);
        let p = AttentionParams {
            wq: store.add("wq", eye.clone()),
            bq: store.add("bq", z.clone()),
            wk: store.add("wk", eye.clone()),
            bk: store.add("bk", z.clone()),
            wv: store.add("wv", Tensor::from_rows(&[vec![2.0, 0.0], vec![0.0, 1.0]])),
            bv: store.add("bv", z.clone()),
            wo: store.add("wo", eye),
            bo: store.add("bo", z),
            heads: 1,
            d_model: 2,
        };
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 0.0, 0.5, 1.0]).unwrap();
        let out = temporal_attention(&x, &store, &p).unwrap();
        // scores: x_i . x_j / sqrt(2)
        let s = |a: [f64; 2], b: [f64; 2]| (a[0] * b[0] + a[1] * b[1]) / 2f64.sqrt();
        let (x1, x2) = ([1.0, 0.0], [0.5, 1.0]);
        let v1 = [2.0, 0.0];
        let v2 = [1.0, 1.0];
        for (i, xi) in [x1, x2].iter().enumerate() {
            let (e1, e2) = (s(*xi, x1).exp(), s(*xi, x2).exp());
            let (a1, a2) = (e1 / (e1 + e2), e2 / (e1 + e2));
            for j in 0..2 {
                let want = a1 * v1[j] + a2 * v2[j];
                assert!((out.data()[i * 2 + j] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rows_sum_to_one_and_channels_independent() {
        let (store, p) = setup(8, 2, 5);
        let mut rng = RngState::new(6);
        let x = rng.normal_tensor(&[3, 4, 8], 1.0);
        let w = attention_weights(&x, &store, &p).unwrap();
        for row in w.data().chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let base = temporal_attention(&x, &store, &p).unwrap();
        let mut x2 = x.clone();
        for v in &mut x2.data_mut()[32..64] {
            *v += rng.normal();
        }
        let pert = temporal_attention(&x2, &store, &p).unwrap();
        assert_eq!(&base.data()[..32], &pert.data()[..32]);
        assert_eq!(&base.data()[64..], &pert.data()[64..]);

        // permuting variables permutes outputs
        let perm = [2usize, 0, 1];
        let xp = Tensor::new(
            vec![3, 4, 8],
            perm.iter().flat_map(|&c| x.data()[c * 32..(c + 1) * 32].to_vec()).collect(),
        )
        .unwrap();
        let outp = temporal_attention(&xp, &store, &p).unwrap();
        for (i, &c) in perm.iter().enumerate() {
            assert_eq!(&outp.data()[i * 32..(i + 1) * 32], &base.data()[c * 32..(c + 1) * 32]);
        }
    }

    #[test]
    fn gradients_through_attention() {
        let (store, p) = setup(4, 2, 7);
        let x = RngState::new(8).normal_tensor(&[2, 3, 4], 1.0);
        let err = grad_check(
            |t, v| {
                let bound = store.bind(t, false);
                let out = attention_var(t, &bound, &p, v)?;
                let sq = t.mul(out.output, out.output)?;
                Ok(t.sum_all(sq))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");

        let wq = store.get(p.wq).clone();
        let err = grad_check(
            |t, w| {
                let bound = store.bind(t, false).with(p.wq, w);
                let xv = t.constant(x.clone());
                let out = attention_var(t, &bound, &p, xv)?.output;
                let sq = t.mul(out, out)?;
                Ok(t.sum_all(sq))
            },
            &wq,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }
}
