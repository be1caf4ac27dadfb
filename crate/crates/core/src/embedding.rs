//! Instance normalization, patching with positional encoding, and the
//! flatten-and-project output head.

use crate::error::{Result, SeedError};
use crate::numeric::{RngState, Tape, Tensor, Var};
use crate::params::{glorot, linear, Bound, ParamId, ParamStore};
use crate::window::SeriesWindow;

/// Lower bound applied to per-variable standard deviations.
pub const STD_FLOOR: f64 = 1e-5;

/// Per-variable statistics used to undo instance normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(n_vars: usize) -> Self {
        Self {
            mean: vec![0.0; n_vars],
            std: vec![1.0; n_vars],
        }
    }
}

fn row_stats(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt().max(STD_FLOOR))
}

/// Z-scores every variable over its lookback.
pub fn instance_normalize(window: &SeriesWindow) -> (SeriesWindow, NormStats) {
    let (normed, mean, std) = normalize_rows(window.values());
    let stats = NormStats {
        mean: mean.into_data(),
        std: std.into_data(),
    };
    (
        SeriesWindow::new(normed).expect("normalization keeps the window shape"),
        stats,
    )
}

/// Z-scores every last-axis row; returns the normalized tensor and the
/// per-row mean and (floored) standard deviation.
pub fn normalize_rows(x: &Tensor) -> (Tensor, Tensor, Tensor) {
    let l = x.last_dim();
    let lead = x.shape()[..x.ndim().saturating_sub(1)].to_vec();
    let mut out = x.clone();
    let mut means = Vec::with_capacity(x.numel() / l.max(1));
    let mut stds = Vec::with_capacity(x.numel() / l.max(1));
    for row in out.data_mut().chunks_mut(l.max(1)) {
        let (m, s) = row_stats(row);
        for v in row.iter_mut() {
            *v = (*v - m) / s;
        }
        means.push(m);
        stds.push(s);
    }
    (
        out,
        Tensor::new(lead.clone(), means).expect("stat shape"),
        Tensor::new(lead, stds).expect("stat shape"),
    )
}

pub fn patch_count(lookback: usize, patch_len: usize) -> usize {
    lookback.div_ceil(patch_len)
}

/// Splits the last axis into `ceil(L / P)` non-overlapping patches, zero
/// padding the final one: `[.., L] -> [.., N, P]`.
pub fn make_patches(x: &Tensor, patch_len: usize) -> Result<Tensor> {
    let l = x.last_dim();
    if patch_len == 0 || patch_len > l {
        return Err(SeedError::config(format!(
            "patch length {patch_len} must be in 1..={l}"
        )));
    }
    let n = patch_count(l, patch_len);
    let padded = n * patch_len;
    let rows = x.numel() / l;
    let mut data = vec![0.0; rows * padded];
    for (r, row) in x.data().chunks(l).enumerate() {
        data[r * padded..r * padded + l].copy_from_slice(row);
    }
    let mut shape = x.shape()[..x.ndim() - 1].to_vec();
    shape.extend([n, patch_len]);
    Tensor::new(shape, data)
}

/// Fixed sinusoidal encoding over patch positions, `[N, D]`.
pub fn positional_encoding(n_patches: usize, d_model: usize) -> Tensor {
    Tensor::from_fn(&[n_patches, d_model], |i| {
        let (pos, j) = ((i / d_model) as f64, i % d_model);
        let freq = 1.0 / 10000f64.powf((2 * (j / 2)) as f64 / d_model as f64);
        if j % 2 == 0 {
            (pos * freq).sin()
        } else {
            (pos * freq).cos()
        }
    })
}

/// Embedded patch tokens for one window, `C x N x D`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchTokens {
    pub values: Tensor,
    pub patch_len: usize,
    pub n_patches: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub patch_len: usize,
    pub d_model: usize,
}

impl EmbeddingParams {
    pub fn init(store: &mut ParamStore, rng: &mut RngState, patch_len: usize, d_model: usize) -> Self {
        Self {
            weight: store.add(
                "embed.weight",
                glorot(rng, &[patch_len, d_model], patch_len, d_model),
            ),
            bias: store.add("embed.bias", Tensor::zeros(&[d_model])),
            patch_len,
            d_model,
        }
    }
}

/// `[.., L]` series to `[.., N, D]` tokens.
pub fn embed_var(tape: &mut Tape, bound: &Bound, params: &EmbeddingParams, x: &Tensor) -> Result<Var> {
    let patches = make_patches(x, params.patch_len)?;
    let n = patches.shape()[patches.ndim() - 2];
    let p = tape.constant(patches);
    let z = linear(tape, p, bound[params.weight], Some(bound[params.bias]))?;
    let pe = tape.constant(positional_encoding(n, params.d_model));
    tape.add_suffix(z, pe)
}

pub fn patch_and_embed(
    window: &SeriesWindow,
    store: &ParamStore,
    params: &EmbeddingParams,
) -> Result<PatchTokens> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, false);
    let out = embed_var(&mut tape, &bound, params, window.values())?;
    Ok(PatchTokens {
        values: tape.value(out).clone(),
        patch_len: params.patch_len,
        n_patches: patch_count(window.len(), params.patch_len),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub horizon: usize,
}

impl HeadParams {
    pub fn init(store: &mut ParamStore, rng: &mut RngState, flat: usize, horizon: usize) -> Self {
        Self {
            weight: store.add("head.weight", glorot(rng, &[flat, horizon], flat, horizon)),
            bias: store.add("head.bias", Tensor::zeros(&[horizon])),
            horizon,
        }
    }
}

/// Flattens each variable's `N x D` tokens and maps them to `T` steps:
/// `[.., N, D] -> [.., T]`. Output stays in normalized units.
pub fn head_var(tape: &mut Tape, bound: &Bound, params: &HeadParams, tokens: Var) -> Result<Var> {
    let shape = tape.shape(tokens).to_vec();
    if shape.len() < 2 {
        return Err(SeedError::shape(format!("head input {shape:?}")));
    }
    let mut flat_shape = shape[..shape.len() - 2].to_vec();
    flat_shape.push(shape[shape.len() - 2] * shape[shape.len() - 1]);
    let flat = tape.reshape(tokens, &flat_shape)?;
    linear(tape, flat, bound[params.weight], Some(bound[params.bias]))
}

/// `y * std + mean` per row; `mean` and `std` have `y`'s leading shape.
pub fn denormalize_var(tape: &mut Tape, y: Var, mean: &Tensor, std: &Tensor) -> Result<Var> {
    let t = tape.value(y).last_dim();
    let s = tape.constant(std.clone());
    let scaled = tape.scale_rows(y, s)?;
    let shape = tape.shape(y).to_vec();
    let m = Tensor::from_fn(&shape, |i| mean.data()[i / t]);
    let m = tape.constant(m);
    tape.add(scaled, m)
}

/// Forecast `C x T` from tokens `C x N x D`, de-normalized with `stats`.
pub fn project_output(
    tokens: &Tensor,
    stats: &NormStats,
    store: &ParamStore,
    head: &HeadParams,
) -> Result<Tensor> {
    let c = tokens.shape().first().copied().unwrap_or(0);
    if tokens.ndim() != 3 || stats.mean.len() != c || stats.std.len() != c {
        return Err(SeedError::shape(format!(
            "tokens {:?} with stats for {} variables",
            tokens.shape(),
            stats.mean.len()
        )));
    }
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, false);
    let x = tape.constant(tokens.clone());
    let y = head_var(&mut tape, &bound, head, x)?;
    let mean = Tensor::new(vec![c], stats.mean.clone())?;
    let std = Tensor::new(vec![c], stats.std.clone())?;
    let out = denormalize_var(&mut tape, y, &mean, &std)?;
    Ok(tape.value(out).clone())
}
