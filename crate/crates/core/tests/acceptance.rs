//! Acceptance suite. Runs as a plain binary (`harness = false`) so that it
//! prints exactly one PASS/FAIL/SKIP line per criterion. Pass criterion
//! numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 4 6`.
//!
//! Criterion 8 needs the ETTh1 CSV: set `SEED_ETTH1_CSV=/path/to/ETTh1.csv`.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use seed_core::attention::{attention_var, AttentionParams};
use seed_core::data::{self, Dataset, Splits};
use seed_core::embedding::{embed_var, head_var, normalize_rows, EmbeddingParams, HeadParams};
use seed_core::fuser::fuse_var;
use seed_core::model::{ForwardOptions, ModelConfig, SeedModel, Variant};
use seed_core::numeric::{fft_real, grad_check, gradient_errors, RngState, Tape, Tensor, Var};
use seed_core::params::{Bound, ParamStore};
use seed_core::spatial::{
    cse_var, distance_var, knn_sparsify, plain_softmax_graph, sign_softmax_graph, tanh_l1_graph, unfold_var,
    CseConfig, CseParams, GraphVariant,
};
use seed_core::spectral::{
    acf_entropy_study, autocorrelation, entropy_of_power, spectral_entropy, spectral_entropy_var, SyntheticSpec,
};
use seed_core::stats::{pearson, spearman};
use seed_core::training::{self, evaluate_persistence, total_loss_var, MetricsReport, TrainConfig};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(start: Instant, budget: Duration) -> Result<f64, String> {
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < budget.as_secs_f64(), || format!("took {secs:.1}s, budget {}s", budget.as_secs()))?;
    Ok(secs)
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

// ---------------------------------------------------------------------------
// 1. Spectral properties

fn spectral_properties() -> Check {
    let start = Instant::now();
    let mut rng = RngState::new(1);
    let mut max_scale_err: f64 = 0.0;
    for i in 0..1000 {
        let len = 8 + rng.below(249);
        let scale = rng.uniform_range(0.1, 10.0);
        let x: Vec<f64> = rng.normals(len).into_iter().map(|v| v * scale + 0.5).collect();
        let h = spectral_entropy(&x, None).map_err(e)?;
        ensure((0.0..=1.0).contains(&h), || format!("series {i}: entropy {h} outside [0, 1]"))?;
        for c in [-3.0, 0.5, 10.0] {
            let y: Vec<f64> = x.iter().map(|v| c * v).collect();
            let hc = spectral_entropy(&y, None).map_err(e)?;
            max_scale_err = max_scale_err.max((hc - h).abs());
        }
    }
    ensure(max_scale_err <= 1e-12, || format!("scale invariance error {max_scale_err:e}"))?;
    for len in [16usize, 64, 96, 100, 257] {
        for k in [1, 3, len / 4] {
            let x: Vec<f64> = (0..len)
                .map(|t| (std::f64::consts::TAU * (k * t) as f64 / len as f64).cos())
                .collect();
            let h = spectral_entropy(&x, None).map_err(e)?;
            let expect = 2f64.ln() / (len as f64).ln();
            ensure((h - expect).abs() < 1e-9, || format!("tone L={len} k={k}: {h} vs {expect}"))?;
        }
    }
    for len in [2usize, 7, 96, 512] {
        let h = entropy_of_power(&vec![0.37; len]).map_err(e)?;
        ensure((h - 1.0).abs() < 1e-9, || format!("uniform spectrum L={len}: {h}"))?;
    }
    let secs = within_budget(start, Duration::from_secs(5))?;
    Ok(format!("1000 series, max scale drift {max_scale_err:.1e}, {secs:.2}s"))
}

// ---------------------------------------------------------------------------
// 2. Noise-fraction study

fn alpha_study() -> Check {
    let start = Instant::now();
    let alphas: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let mut worst_rho: f64 = 1.0;
    let mut worst_r: f64 = -1.0;
    for seed in 0..20 {
        let spec = SyntheticSpec {
            alpha: 0.0,
            period: 24,
            length: 512,
            seed,
        };
        let rows = acf_entropy_study(&alphas, &spec).map_err(e)?;
        let h: Vec<f64> = rows.iter().map(|r| r.spectral_entropy).collect();
        let acf: Vec<f64> = rows.iter().map(|r| r.acf_peak).collect();
        let rho = spearman(&alphas, &h);
        let r = pearson(&acf, &h);
        ensure(rho > 0.95, || format!("seed {seed}: spearman {rho:.4}"))?;
        ensure(r < -0.8, || format!("seed {seed}: pearson {r:.4}"))?;
        worst_rho = worst_rho.min(rho);
        worst_r = worst_r.max(r);
    }
    let secs = within_budget(start, Duration::from_secs(30))?;
    Ok(format!(
        "20 seeds, min spearman {worst_rho:.4}, max pearson {worst_r:.4}, {secs:.2}s"
    ))
}

// ---------------------------------------------------------------------------
// 3. Wiener-Khinchin

fn wiener_khinchin() -> Check {
    let start = Instant::now();
    let mut rng = RngState::new(3);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let len = 16 + rng.below(241);
        let x = rng.normals(len);
        let mean = x.iter().sum::<f64>() / len as f64;
        let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
        let r0 = c.iter().map(|v| v * v).sum::<f64>() / len as f64;
        // biased autocovariance from the library's normalized ACF
        let acf: Vec<f64> = autocorrelation(&x, len - 1).map_err(e)?.iter().map(|v| v * r0).collect();
        let periodogram: Vec<f64> = fft_real(&c).map_err(e)?.power().iter().map(|p| p / len as f64).collect();
        let floor = periodogram.iter().sum::<f64>() / len as f64;
        for (f, p) in periodogram.iter().enumerate() {
            let w = std::f64::consts::TAU * f as f64 / len as f64;
            let dft = r0 + 2.0 * acf.iter().enumerate().map(|(k, r)| r * (w * (k + 1) as f64).cos()).sum::<f64>();
            worst = worst.max((dft - p).abs() / p.abs().max(floor));
        }
    }
    ensure(worst < 1e-6, || format!("max relative error {worst:e}"))?;
    let secs = within_budget(start, Duration::from_secs(10))?;
    Ok(format!("50 series, max relative error {worst:.1e}, {secs:.2}s"))
}

// ---------------------------------------------------------------------------
// 4. Signed graphs

fn signed_graphs() -> Check {
    let start = Instant::now();
    let mut rng = RngState::new(4);
    for i in 0..500 {
        let n = 1 + rng.below(16);
        let h = 1 + rng.below(4);
        let spread = rng.uniform_range(0.05, 5.0);
        let scores = rng.normal_tensor(&[h, n, n], spread);
        let s = scores.data();

        let tanh = tanh_l1_graph(&scores).map_err(e)?;
        let soft = sign_softmax_graph(&scores).map_err(e)?;
        for (j, (&a, (&t, &m))) in s.iter().zip(tanh.weights.data().iter().zip(soft.weights.data())).enumerate() {
            ensure(a == 0.0 || (t.signum() == a.signum() && t != 0.0), || {
                format!("matrix {i}: tanh weight {t} at {j} has the wrong sign for score {a}")
            })?;
            ensure(m != 0.0 && m.signum() == if a >= 0.0 { 1.0 } else { -1.0 }, || {
                format!("matrix {i}: softmax weight {m} at {j} has the wrong sign for score {a}")
            })?;
        }
        for (r, (tr, mr)) in tanh.weights.data().chunks(n).zip(soft.weights.data().chunks(n)).enumerate() {
            let l1: f64 = tr.iter().map(|v| v.abs()).sum();
            ensure((l1 - 1.0).abs() < 1e-12, || format!("matrix {i} row {r}: tanh L1 {l1}"))?;
            let mag: f64 = mr.iter().map(|v| v.abs()).sum();
            ensure((mag - 1.0).abs() < 1e-12, || format!("matrix {i} row {r}: softmax magnitude {mag}"))?;
        }

        let k = 1 + rng.below(n);
        let keep_self = rng.uniform() < 0.5;
        for g in [&tanh, &soft] {
            let once = knn_sparsify(g, k, keep_self).map_err(e)?;
            let twice = knn_sparsify(&once, k, keep_self).map_err(e)?;
            ensure(once == twice, || format!("matrix {i}: knn k={k} not idempotent"))?;
            for row in once.mask.chunks(n) {
                let kept = row.iter().filter(|m| **m).count();
                ensure(kept == k, || format!("matrix {i}: kept {kept} entries, expected {k}"))?;
            }
        }

        let plain = plain_softmax_graph(&scores).map_err(e)?;
        ensure(plain.weights.data().iter().all(|v| *v >= 0.0), || {
            format!("matrix {i}: plain softmax produced a negative weight")
        })?;
    }
    let secs = within_budget(start, Duration::from_secs(10))?;
    Ok(format!("500 matrices, {secs:.2}s"))
}

// ---------------------------------------------------------------------------
// 5. Gradients

/// Relative errors for every scalar of every parameter in `store`.
fn param_errors<F>(store: &ParamStore, f: F) -> Result<Vec<f64>, String>
where
    F: Fn(&mut Tape, &Bound) -> seed_core::Result<Var>,
{
    let mut all = Vec::new();
    for id in store.ids() {
        let errs = gradient_errors(
            |t, p| {
                let bound = store.bind(t, false).with(id, p);
                f(t, &bound)
            },
            store.get(id),
            1e-6,
        )
        .map_err(e)?;
        all.extend(errs);
    }
    Ok(all)
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

fn square_mean(t: &mut Tape, v: Var, target: &Tensor) -> seed_core::Result<Var> {
    let c = t.constant(target.clone());
    let d = t.sub(v, c)?;
    let sq = t.mul(d, d)?;
    Ok(t.mean_all(sq))
}

/// Seeded inputs whose layer-0 graph scores all satisfy `|s| > 0.1`.
fn clear_scores(model: &SeedModel, first_seed: u64) -> Result<(Tensor, u64), String> {
    let layer = &model.layers()[0];
    let cse = layer.spatial.as_ref().ok_or("model has no spatial pathway")?;
    let cfg = model.config();
    for seed in first_seed..first_seed + 500 {
        let x = RngState::new(seed).normal_tensor(&[2, cfg.n_vars, cfg.lookback], 1.0);
        let mut tape = Tape::new();
        let bound = model.store().bind(&mut tape, false);
        let (xn, _, _) = normalize_rows(&x);
        let h = embed_var(&mut tape, &bound, model.embedding(), &xn).map_err(e)?;
        let shape = tape.shape(h).to_vec();
        let size = 2.min(shape[2]);
        let win = unfold_var(&mut tape, h, size).map_err(e)?;
        let ws = tape.shape(win).to_vec();
        let nodes = tape.reshape(win, &[ws[0] * ws[1], ws[2], ws[3]]).map_err(e)?;
        let s = distance_var(&mut tape, &bound, cse, nodes).map_err(e)?;
        if tape.value(s).data().iter().all(|v| v.abs() > 0.1) {
            return Ok((x, seed));
        }
    }
    Err("no input with |s| > 0.1 found".into())
}

fn gradients() -> Check {
    let start = Instant::now();
    let mut notes = Vec::new();
    let mut rng = RngState::new(5);

    // single ops, < 1e-6
    let x = rng.normal_tensor(&[3, 5], 1.0);
    let w = rng.normal_tensor(&[5, 4], 1.0);
    let ops: Vec<(&str, Box<dyn Fn(&mut Tape, Var) -> seed_core::Result<Var>>)> = vec![
        ("matmul", Box::new(|t: &mut Tape, v| {
            let wv = t.constant(w.clone());
            let y = t.matmul(v, wv)?;
            let y2 = t.mul(y, y)?;
            Ok(t.sum_all(y2))
        })),
        ("softmax", Box::new(|t: &mut Tape, v| {
            let y = t.softmax(v)?;
            let c = t.constant(Tensor::from_fn(&[3, 5], |i| i as f64 * 0.1));
            let y = t.mul(y, c)?;
            Ok(t.sum_all(y))
        })),
        ("tanh", Box::new(|t: &mut Tape, v| {
            let y = t.tanh(v);
            let y = t.mul(y, y)?;
            Ok(t.sum_all(y))
        })),
        ("silu", Box::new(|t: &mut Tape, v| {
            let y = t.silu(v);
            Ok(t.sum_all(y))
        })),
        ("sigmoid", Box::new(|t: &mut Tape, v| {
            let y = t.sigmoid(v);
            let y = t.mul(y, y)?;
            Ok(t.sum_all(y))
        })),
        ("layer_norm", Box::new(|t: &mut Tape, v| {
            let g = t.constant(Tensor::from_fn(&[5], |i| 1.0 + 0.1 * i as f64));
            let b = t.constant(Tensor::from_fn(&[5], |i| 0.05 * i as f64));
            let y = t.layer_norm(v, g, b)?;
            let c = t.constant(Tensor::from_fn(&[3, 5], |i| (i as f64 * 0.7).sin()));
            let y = t.mul(y, c)?;
            Ok(t.sum_all(y))
        })),
        ("spectral_entropy", Box::new(|t: &mut Tape, v| {
            let h = spectral_entropy_var(t, v, None)?;
            Ok(t.sum_all(h))
        })),
    ];
    for (name, f) in &ops {
        let err = grad_check(|t, v| f(t, v), &x, 1e-5).map_err(e)?;
        ensure(err < 1e-6, || format!("{name}: {err:e}"))?;
    }
    notes.push(format!("{} ops", ops.len()));

    // filtered entropy with respect to the filter, < 1e-6
    let series = rng.normal_tensor(&[2, 12], 1.0);
    let filter = Tensor::from_fn(&[2, 12], |i| if i < 12 { 1.0 + 0.05 * i as f64 } else { 0.02 * (i - 12) as f64 });
    let err = grad_check(
        |t, f| {
            let xs = t.constant(series.clone());
            let h = spectral_entropy_var(t, xs, Some(f))?;
            Ok(t.sum_all(h))
        },
        &filter,
        1e-5,
    )
    .map_err(e)?;
    ensure(err < 1e-6, || format!("filter gradient {err:e}"))?;

    // attention, embedding and head (compositions), < 1e-4
    let mut store = ParamStore::new();
    let attn = AttentionParams::init(&mut store, &mut rng, "attn", 8, 2).map_err(e)?;
    let tokens = rng.normal_tensor(&[2, 3, 8], 1.0);
    let target = rng.normal_tensor(&[2, 3, 8], 1.0);
    let err = grad_check(
        |t, v| {
            let b = store.bind(t, false);
            let y = attention_var(t, &b, &attn, v)?.output;
            square_mean(t, y, &target)
        },
        &tokens,
        1e-6,
    )
    .map_err(e)?;
    ensure(err < 1e-4, || format!("attention input {err:e}"))?;
    let perr = max(&param_errors(&store, |t, b| {
        let v = t.constant(tokens.clone());
        let y = attention_var(t, b, &attn, v)?.output;
        square_mean(t, y, &target)
    })?);
    ensure(perr < 1e-4, || format!("attention parameters {perr:e}"))?;

    let mut store = ParamStore::new();
    let emb = EmbeddingParams::init(&mut store, &mut rng, 4, 8);
    let head = HeadParams::init(&mut store, &mut rng, 16, 4);
    let raw = rng.normal_tensor(&[2, 2, 8], 1.0);
    let y4 = rng.normal_tensor(&[2, 2, 4], 1.0);
    let perr = max(&param_errors(&store, |t, b| {
        let h = embed_var(t, b, &emb, &raw)?;
        let y = head_var(t, b, &head, h)?;
        square_mean(t, y, &y4)
    })?);
    ensure(perr < 1e-4, || format!("embedding/head parameters {perr:e}"))?;
    notes.push("attention, embedding, head".into());

    // spatial pathway for both signed variants at clear score points
    for variant in [GraphVariant::Tanh, GraphVariant::Softmax] {
        let mut found = None;
        for seed in 0..200 {
            let mut store = ParamStore::new();
            let mut prng = RngState::new(100 + seed);
            let cfg = CseConfig {
                heads: 2,
                variant,
                ..CseConfig::default()
            };
            let cse = CseParams::init(&mut store, &mut prng, "cse", 8, cfg).map_err(e)?;
            let x = prng.normal_tensor(&[1, 3, 3, 8], 1.0);
            let mut tape = Tape::new();
            let b = store.bind(&mut tape, false);
            let xv = tape.constant(x.clone());
            let win = unfold_var(&mut tape, xv, 2).map_err(e)?;
            let nodes = tape.reshape(win, &[2, 6, 8]).map_err(e)?;
            let s = distance_var(&mut tape, &b, &cse, nodes).map_err(e)?;
            if tape.value(s).data().iter().all(|v| v.abs() > 0.1) {
                found = Some((store, cse, x));
                break;
            }
        }
        let (store, cse, x) = found.ok_or("no clear spatial sample")?;
        let target = RngState::new(7).normal_tensor(&[1, 3, 3, 8], 1.0);
        let err = grad_check(
            |t, v| {
                let b = store.bind(t, false);
                let y = cse_var(t, &b, &cse, v)?.output;
                square_mean(t, y, &target)
            },
            &x,
            1e-6,
        )
        .map_err(e)?;
        ensure(err < 1e-4, || format!("{variant:?} spatial input {err:e}"))?;
        let perr = max(&param_errors(&store, |t, b| {
            let v = t.constant(x.clone());
            let y = cse_var(t, b, &cse, v)?.output;
            square_mean(t, y, &target)
        })?);
        ensure(perr < 1e-4, || format!("{variant:?} spatial parameters {perr:e}"))?;
    }
    notes.push("spatial (tanh, softmax)".into());

    // fuser, < 1e-5
    let tt = rng.normal_tensor(&[2, 3, 8], 1.0);
    let ee = rng.normal_tensor(&[2, 3, 8], 1.0);
    let ent = Tensor::new(vec![2], vec![0.2, 0.65]).unwrap();
    let fused_target = rng.normal_tensor(&[2, 3, 8], 1.0);
    let err = grad_check(
        |t, v| {
            let e = t.constant(ee.clone());
            let h = t.constant(ent.clone());
            let (f, _) = fuse_var(t, v, e, h)?;
            square_mean(t, f, &fused_target)
        },
        &tt,
        1e-6,
    )
    .map_err(e)?;
    ensure(err < 1e-5, || format!("fuser {err:e}"))?;

    // training loss, < 1e-5
    let y = rng.normal_tensor(&[2, 3, 12], 1.0);
    let yhat = rng.normal_tensor(&[2, 3, 12], 1.0);
    let err = grad_check(|t, v| Ok(total_loss_var(t, v, &y, 0.5)?.total), &yhat, 1e-6).map_err(e)?;
    ensure(err < 1e-5, || format!("total loss {err:e}"))?;
    notes.push("fuser, loss".into());

    // full model, micro configuration
    for graph in [GraphVariant::Tanh, GraphVariant::Softmax] {
        let cfg = ModelConfig {
            n_vars: 2,
            lookback: 8,
            horizon: 4,
            patch_len: 4,
            d_model: 8,
            attn_heads: 2,
            gcn_heads: 2,
            n_layers: 1,
            graph_variant: graph,
            detach_entropy: false,
            seed: 3,
            ..ModelConfig::default()
        };
        let model = SeedModel::new(cfg).map_err(e)?;
        let (x, seed) = clear_scores(&model, 0)?;
        let y = RngState::new(seed + 1000).normal_tensor(&[2, 2, 4], 1.0);
        let errs = param_errors(model.store(), |t, b| {
            let out = model.forward_var(t, b, &x, &mut ForwardOptions::default())?;
            Ok(total_loss_var(t, out.prediction, &y, 0.1)?.total)
        })?;
        let good = errs.iter().filter(|v| **v < 1e-4).count();
        ensure(good as f64 >= 0.99 * errs.len() as f64, || {
            format!("{graph:?} model: {good}/{} parameters within 1e-4", errs.len())
        })?;
        notes.push(format!("{graph:?} model {good}/{}", errs.len()));
    }
    let secs = within_budget(start, Duration::from_secs(60))?;
    Ok(format!("{}, {secs:.2}s", notes.join("; ")))
}

// ---------------------------------------------------------------------------
// 6. Channel independence

fn channel_independence() -> Check {
    let start = Instant::now();
    let cfg = ModelConfig {
        n_vars: 5,
        lookback: 32,
        horizon: 8,
        patch_len: 8,
        d_model: 16,
        attn_heads: 4,
        variant: Variant::WoCse,
        seed: 6,
        ..ModelConfig::default()
    };
    let model = SeedModel::new(cfg).map_err(e)?;
    let mut rng = RngState::new(6);
    let x = rng.normal_tensor(&[1, 5, 32], 1.0);
    let base = model.forward_batch(&x).map_err(e)?;
    for trial in 0..100 {
        let j = rng.below(5);
        let mut y = x.clone();
        let scale = rng.uniform_range(0.01, 10.0);
        for v in &mut y.data_mut()[j * 32..(j + 1) * 32] {
            *v += scale * rng.normal();
        }
        let out = model.forward_batch(&y).map_err(e)?;
        for i in (0..5).filter(|&i| i != j) {
            let a = &base.data()[i * 8..(i + 1) * 8];
            let b = &out.data()[i * 8..(i + 1) * 8];
            ensure(a.iter().zip(b).all(|(p, q)| p.to_bits() == q.to_bits()), || {
                format!("trial {trial}: perturbing channel {j} changed channel {i}")
            })?;
        }
    }
    let secs = within_budget(start, Duration::from_secs(10))?;
    Ok(format!("100 perturbations bit-identical, {secs:.2}s"))
}

// ---------------------------------------------------------------------------
// 7. Training sanity

const SANITY_D_MODEL: usize = 16;

fn sanity_splits() -> Result<Splits, String> {
    let ds = data::synthetic_mixed(4, 4, 4000, 0).map_err(e)?;
    let ratio = "7:1:2".parse().map_err(e)?;
    Ok(data::prepare(&ds, ratio, 96, 96, true).map_err(e)?.0)
}

fn train_variant(splits: &Splits, variant: Variant) -> Result<MetricsReport, String> {
    let cfg = ModelConfig {
        n_vars: 8,
        lookback: 96,
        horizon: 96,
        patch_len: 16,
        d_model: SANITY_D_MODEL,
        variant,
        seed: 0,
        ..ModelConfig::default()
    };
    let train_cfg = TrainConfig {
        epochs: 30,
        patience: 5,
        seed: 0,
        ..TrainConfig::default()
    };
    let (_, report) = training::train(SeedModel::new(cfg).map_err(e)?, splits, &train_cfg).map_err(e)?;
    Ok(report)
}

fn training_sanity() -> Check {
    let start = Instant::now();
    let splits = sanity_splits()?;
    let persistence = evaluate_persistence(&splits.test, 96, 96).map_err(e)?.mse;
    let full = train_variant(&splits, Variant::Full)?;
    let wo_cse = train_variant(&splits, Variant::WoCse)?;
    let wo_tattn = train_variant(&splits, Variant::WoTattn)?;
    let detail = format!(
        "persistence {persistence:.4}, full {:.4} ({} epochs), wo_cse {:.4}, wo_tattn {:.4}",
        full.mse, full.epochs, wo_cse.mse, wo_tattn.mse
    );
    ensure(full.mse <= 0.7 * persistence, || format!("full does not beat persistence by 30%: {detail}"))?;
    ensure(full.mse <= wo_cse.mse.min(wo_tattn.mse), || format!("full is not best: {detail}"))?;
    let secs = within_budget(start, Duration::from_secs(15 * 60))?;
    Ok(format!("{detail}, {secs:.0}s"))
}

// ---------------------------------------------------------------------------
// 8. ETTh1 desk check

fn etth1(path: &Path) -> Check {
    let start = Instant::now();
    let bytes = std::fs::read(path).map_err(e)?;
    let ds: Dataset = data::read_csv(bytes.as_slice(), "ETTh1", &data::CsvOptions { date_col: true }).map_err(e)?;
    let ratio = data::Registry::builtin().get("ETTh1").unwrap().split_ratio().map_err(e)?;
    let splits = data::prepare(&ds, ratio, 96, 96, true).map_err(e)?.0;
    let persistence = evaluate_persistence(&splits.test, 96, 96).map_err(e)?.mse;
    let cfg = ModelConfig {
        n_vars: ds.n_vars(),
        d_model: 64,
        n_layers: 2,
        ..ModelConfig::default()
    };
    let train_cfg = TrainConfig {
        epochs: 10,
        patience: 3,
        ..TrainConfig::default()
    };
    let (_, report) = training::train(SeedModel::new(cfg).map_err(e)?, &splits, &train_cfg).map_err(e)?;
    let detail = format!("test mse {:.4}, persistence {persistence:.4}", report.mse);
    ensure(report.mse <= 0.50 && report.mse < persistence, || detail.clone())?;
    let secs = within_budget(start, Duration::from_secs(45 * 60))?;
    Ok(format!("{detail}, {secs:.0}s"))
}

// ---------------------------------------------------------------------------
// 9. CLI determinism

fn strip_seconds(json: &str) -> Result<serde_json::Value, String> {
    let mut v: serde_json::Value = serde_json::from_str(json).map_err(e)?;
    v.as_object_mut().ok_or("metrics are not an object")?.remove("seconds");
    Ok(v)
}

fn determinism() -> Check {
    let start = Instant::now();
    let bin = env!("CARGO_BIN_EXE_seed");
    let dir = tempfile::tempdir().map_err(e)?;
    let csv = dir.path().join("mixed.csv");
    let out = dir.path().join("run");
    let status = Command::new(bin)
        .args(["synth", "--sines", "2", "--noise", "2", "--length", "600", "--seed", "9", "--out"])
        .arg(&csv)
        .status()
        .map_err(e)?;
    ensure(status.success(), || "synth failed".into())?;
    let argv: Vec<std::ffi::OsString> = [
        "train", "--date-col", "false", "--lookback", "48", "--horizon", "24", "--patch-len", "8", "--d-model", "8",
        "--heads", "2", "--epochs", "3", "--seed", "11", "--quiet", "--data",
    ]
    .iter()
    .map(Into::into)
    .chain([csv.clone().into_os_string(), "--out".into(), out.clone().into_os_string()])
    .collect();
    let mut runs = Vec::new();
    for threads in ["1", "2"] {
        let o = Command::new(bin)
            .args(&argv)
            .env("SEED_NUM_THREADS", threads)
            .output()
            .map_err(e)?;
        ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
        runs.push(std::fs::read_to_string(out.join("metrics.json")).map_err(e)?);
    }
    let (a, b) = (strip_seconds(&runs[0])?, strip_seconds(&runs[1])?);
    ensure(a == b, || "metrics differ between identical runs".into())?;
    let o = Command::new(bin).args(["eval", "--run"]).arg(&out).output().map_err(e)?;
    ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
    let eval = strip_seconds(&String::from_utf8_lossy(&o.stdout))?;
    for key in ["mse", "mae", "per_horizon_mse"] {
        ensure(eval[key] == a[key], || format!("eval {key} differs from train-time test metrics"))?;
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(format!("identical metrics across runs and eval, {secs:.1}s"))
}

// ---------------------------------------------------------------------------

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: u32| selected.is_empty() || selected.contains(&n);
    let criteria: Vec<(u32, &str, fn() -> Check)> = vec![
        (1, "spectral properties", spectral_properties),
        (2, "noise-fraction study", alpha_study),
        (3, "Wiener-Khinchin oracle", wiener_khinchin),
        (4, "signed-graph suite", signed_graphs),
        (5, "gradient suite", gradients),
        (6, "channel independence", channel_independence),
        (7, "training sanity", training_sanity),
    ];
    let mut failed = 0;
    let mut line = |n: u32, name: &str, result: Option<Check>| match result {
        Some(Ok(detail)) => println!("criterion {n} ({name}): PASS  {detail}"),
        Some(Err(detail)) => {
            failed += 1;
            println!("criterion {n} ({name}): FAIL  {detail}");
        }
        None => println!("criterion {n} ({name}): SKIP  set SEED_ETTH1_CSV to the ETTh1 csv to run"),
    };
    for (n, name, f) in criteria {
        if want(n) {
            let result = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
            line(n, name, Some(result));
        }
    }
    if want(8) {
        let result = std::env::var_os("SEED_ETTH1_CSV").map(|p| etth1(Path::new(&p)));
        line(8, "ETTh1 desk check", result);
    }
    if want(9) {
        let result = std::panic::catch_unwind(determinism).unwrap_or_else(|_| Err("panicked".into()));
        line(9, "CLI determinism", Some(result));
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
