//! Entropy- and similarity-guided blending of the temporal and spatial
//! pathways.

use crate::error::{Result, SeedError};
use crate::numeric::{CustomOp, Tape, Tensor, Var};
use crate::spectral::EntropyVector;

/// Per-(variable, patch) weight on the temporal pathway.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionWeights {
    w: Tensor,
}

impl FusionWeights {
    pub fn new(w: Tensor) -> Result<Self> {
        if w.ndim() != 2 {
            return Err(SeedError::shape(format!("fusion weights must be C x N, got {:?}", w.shape())));
        }
        if let Some(v) = w.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(SeedError::Numeric(format!("fusion weight {v} outside [0, 1]")));
        }
        Ok(Self { w })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.w
    }

    pub fn get(&self, c: usize, n: usize) -> f64 {
        self.w.at(&[c, n])
    }
}

struct SimilarityOp;

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl CustomOp for SimilarityOp {
    fn name(&self) -> &'static str {
        "cosine_similarity"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (t, e) = (inputs[0], inputs[1]);
        let d = t.last_dim();
        let mut dt = vec![0.0; t.numel()];
        let mut de = vec![0.0; e.numel()];
        for (r, &g) in grad.data().iter().enumerate() {
            let tr = &t.data()[r * d..(r + 1) * d];
            let er = &e.data()[r * d..(r + 1) * d];
            let (nt, ne) = (norm(tr), norm(er));
            if nt * ne < f64::MIN_POSITIVE {
                continue;
            }
            let cos = dot(tr, er) / (nt * ne);
            let h = 0.5 * g;
            for j in 0..d {
                dt[r * d + j] = h * (er[j] / (nt * ne) - cos * tr[j] / (nt * nt));
                de[r * d + j] = h * (tr[j] / (nt * ne) - cos * er[j] / (ne * ne));
            }
        }
        vec![
            needs[0].then(|| Tensor::new(t.shape().to_vec(), dt).unwrap()),
            needs[1].then(|| Tensor::new(e.shape().to_vec(), de).unwrap()),
        ]
    }
}

/// `(cos(T, E) + 1) / 2` along the last axis; `0.5` when either side is
/// the zero vector.
pub fn similarity_var(tape: &mut Tape, t: Var, e: Var) -> Result<Var> {
    let (tv, ev) = (tape.value(t), tape.value(e));
    if tv.shape() != ev.shape() || tv.ndim() == 0 {
        return Err(SeedError::shape(format!(
            "similarity of {:?} and {:?}",
            tv.shape(),
            ev.shape()
        )));
    }
    let d = tv.last_dim();
    let lead = tv.shape()[..tv.ndim() - 1].to_vec();
    let sims = tv
        .data()
        .chunks(d.max(1))
        .zip(ev.data().chunks(d.max(1)))
        .map(|(a, b)| {
            let (na, nb) = (norm(a), norm(b));
            if na * nb < f64::MIN_POSITIVE {
                0.5
            } else {
                ((dot(a, b) / (na * nb)).clamp(-1.0, 1.0) + 1.0) / 2.0
            }
        })
        .collect();
    let out = Tensor::new(lead, sims)?;
    Ok(tape.custom(&[t, e], out, Box::new(SimilarityOp)))
}

/// Similarity in `[0, 1]` between matching temporal and spatial tokens.
pub fn patch_similarity(t: &Tensor, e: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (tv, ev) = (tape.constant(t.clone()), tape.constant(e.clone()));
    let s = similarity_var(&mut tape, tv, ev)?;
    Ok(tape.value(s).clone())
}

/// `F = E + w (T - E)` with `w [..]` broadcast over the last axis.
pub fn blend_var(tape: &mut Tape, t: Var, e: Var, w: Var) -> Result<Var> {
    let diff = tape.sub(t, e)?;
    let scaled = tape.scale_rows(diff, w)?;
    tape.add(e, scaled)
}

/// `w = (1 - SpEn_c)(1 - Sim_{c,n})` for `sim [.., C, N]`, `entropy [.., C]`.
pub fn weights_var(tape: &mut Tape, sim: Var, entropy: Var) -> Result<Var> {
    let dissim = tape.affine(sim, -1.0, 1.0);
    let alpha = tape.affine(entropy, -1.0, 1.0);
    tape.scale_rows(dissim, alpha)
}

/// Fused features and the weights used, for `t, e [.., C, N, D]`.
pub fn fuse_var(tape: &mut Tape, t: Var, e: Var, entropy: Var) -> Result<(Var, Var)> {
    let sim = similarity_var(tape, t, e)?;
    let w = weights_var(tape, sim, entropy)?;
    let f = blend_var(tape, t, e, w)?;
    Ok((f, w))
}

pub fn fusion_weights(t: &Tensor, e: &Tensor, entropy: &EntropyVector) -> Result<FusionWeights> {
    Ok(fuse(t, e, entropy)?.1)
}

/// Blends `C x N x D` temporal and spatial features.
pub fn fuse(t: &Tensor, e: &Tensor, entropy: &EntropyVector) -> Result<(Tensor, FusionWeights)> {
    if t.shape() != e.shape() || t.ndim() != 3 {
        return Err(SeedError::shape(format!(
            "fuse expects equal C x N x D inputs, got {:?} and {:?}",
            t.shape(),
            e.shape()
        )));
    }
    if entropy.len() != t.shape()[0] {
        return Err(SeedError::shape(format!(
            "entropy has {} entries for {} variables",
            entropy.len(),
            t.shape()[0]
        )));
    }
    let mut tape = Tape::new();
    let (tv, ev) = (tape.constant(t.clone()), tape.constant(e.clone()));
    let h = tape.constant(Tensor::new(vec![entropy.len()], entropy.values().to_vec())?);
    let (f, w) = fuse_var(&mut tape, tv, ev, h)?;
    Ok((tape.value(f).clone(), FusionWeights::new(tape.value(w).clone())?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{grad_check, RngState};
    use proptest::prelude::*;

    fn entropy(v: &[f64]) -> EntropyVector {
        EntropyVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn similarity_examples() {
        let t = Tensor::new(vec![4, 2], vec![1.0, 2.0, 1.0, 2.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        let e = Tensor::new(vec![4, 2], vec![1.0, 2.0, -1.0, -2.0, 0.0, 3.0, 1.0, 1.0]).unwrap();
        let s = patch_similarity(&t, &e).unwrap();
        let want = [1.0, 0.0, 0.5, 0.5];
        for (a, b) in s.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn fuse_examples() {
        let mut rng = RngState::new(1);
        let t = rng.normal_tensor(&[2, 3, 4], 1.0);
        let e = rng.normal_tensor(&[2, 3, 4], 1.0);
        let (f, w) = fuse(&t, &e, &entropy(&[1.0, 0.3])).unwrap();
        assert_eq!(&f.data()[..12], &e.data()[..12]);
        assert!((0..3).all(|n| w.get(0, n) == 0.0));

        // SpEn = 0 with opposite tokens gives w = 1
        let neg = t.map(|v| -v);
        let (f, w) = fuse(&t, &neg, &entropy(&[0.0, 0.0])).unwrap();
        assert!(w.tensor().data().iter().all(|v| (v - 1.0).abs() < 1e-15));
        for (a, b) in f.data().iter().zip(t.data()) {
            assert!((a - b).abs() < 1e-15);
        }

        // SpEn = 0.5 with orthogonal tokens: w = 0.25
        let t = Tensor::new(vec![1, 1, 2], vec![2.0, 0.0]).unwrap();
        let e = Tensor::new(vec![1, 1, 2], vec![0.0, 4.0]).unwrap();
        let (f, w) = fuse(&t, &e, &entropy(&[0.5])).unwrap();
        assert!((w.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((f.data()[0] - 0.25 * 2.0).abs() < 1e-15);
        assert!((f.data()[1] - 0.75 * 4.0).abs() < 1e-15);
    }

    #[test]
    fn shape_errors() {
        let a = Tensor::zeros(&[2, 3, 4]);
        let b = Tensor::zeros(&[2, 3, 5]);
        assert!(matches!(fuse(&a, &b, &entropy(&[0.0, 0.0])), Err(SeedError::Shape(_))));
        assert!(matches!(fuse(&a, &a, &entropy(&[0.0])), Err(SeedError::Shape(_))));
    }

    #[test]
    fn gradients() {
        let mut rng = RngState::new(2);
        let t = rng.normal_tensor(&[2, 3, 4], 1.0);
        let e = rng.normal_tensor(&[2, 3, 4], 1.0);
        let h = Tensor::new(vec![2], vec![0.3, 0.8]).unwrap();
        let loss = |tape: &mut Tape, f: Var| -> Result<Var> {
            let sq = tape.mul(f, f)?;
            Ok(tape.sum_all(sq))
        };
        let err = grad_check(
            |tape, v| {
                let ev = tape.constant(e.clone());
                let hv = tape.constant(h.clone());
                let (f, _) = fuse_var(tape, v, ev, hv)?;
                loss(tape, f)
            },
            &t,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
        let err = grad_check(
            |tape, v| {
                let tv = tape.constant(t.clone());
                let hv = tape.constant(h.clone());
                let (f, _) = fuse_var(tape, tv, v, hv)?;
                loss(tape, f)
            },
            &e,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
        let err = grad_check(
            |tape, v| {
                let tv = tape.constant(t.clone());
                let ev = tape.constant(e.clone());
                let (f, _) = fuse_var(tape, tv, ev, v)?;
                loss(tape, f)
            },
            &h,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    proptest! {
        #[test]
        fn blend_stays_on_segment(
            t in prop::collection::vec(-5.0f64..5.0, 12),
            e in prop::collection::vec(-5.0f64..5.0, 12),
            h in prop::collection::vec(0.0f64..=1.0, 2),
        ) {
            let tt = Tensor::new(vec![2, 2, 3], t.clone()).unwrap();
            let et = Tensor::new(vec![2, 2, 3], e.clone()).unwrap();
            let (f, w) = fuse(&tt, &et, &entropy(&h)).unwrap();
            prop_assert!(w.tensor().data().iter().all(|v| (0.0..=1.0).contains(v)));
            for ((fv, a), b) in f.data().iter().zip(&t).zip(&e) {
                prop_assert!(*fv >= a.min(*b) - 1e-12 && *fv <= a.max(*b) + 1e-12);
            }
        }

        #[test]
        fn higher_entropy_never_raises_weight(
            t in prop::collection::vec(-5.0f64..5.0, 4),
            e in prop::collection::vec(-5.0f64..5.0, 4),
            lo in 0.0f64..=1.0,
            bump in 0.0f64..=1.0,
        ) {
            let hi = (lo + bump).min(1.0);
            let tt = Tensor::new(vec![1, 1, 4], t).unwrap();
            let et = Tensor::new(vec![1, 1, 4], e).unwrap();
            let w_lo = fusion_weights(&tt, &et, &entropy(&[lo])).unwrap().get(0, 0);
            let w_hi = fusion_weights(&tt, &et, &entropy(&[hi])).unwrap().get(0, 0);
            prop_assert!(w_hi <= w_lo);
        }
    }
}
