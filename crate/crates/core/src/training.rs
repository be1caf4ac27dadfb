//! Losses, the Adam optimizer, the training loop with early stopping and
//! evaluation metrics.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Segment, Splits};
use crate::error::{Result, SeedError};
use crate::model::{ForwardOptions, SeedModel};
use crate::numeric::{RngState, Tape, Tensor, Var};
use crate::params::ParamStore;
use crate::spectral::{spectral_entropy_or_zero, spectral_entropy_var};

const STREAM_SHUFFLE: u64 = 7001;
const STREAM_DROPOUT: u64 = 7002;

fn check_pair(y: &Tensor, yhat: &Tensor) -> Result<()> {
    if y.shape() != yhat.shape() {
        return Err(SeedError::shape(format!(
            "target {:?} and prediction {:?} differ",
            y.shape(),
            yhat.shape()
        )));
    }
    if y.ndim() == 0 {
        return Err(SeedError::shape("losses need at least one axis"));
    }
    Ok(())
}

/// Mean squared error over all entries.
pub fn loss_pred(y: &Tensor, yhat: &Tensor) -> Result<f64> {
    check_pair(y, yhat)?;
    let sq: f64 = y.data().iter().zip(yhat.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sq / y.numel() as f64)
}

fn row_entropies(x: &Tensor) -> Result<Vec<f64>> {
    x.data()
        .chunks(x.last_dim())
        .map(|row| spectral_entropy_or_zero(row, None))
        .collect()
}

/// Mean over rows (variables) of the squared difference between the
/// unfiltered spectral entropies of target and prediction.
pub fn loss_spen(y: &Tensor, yhat: &Tensor) -> Result<f64> {
    check_pair(y, yhat)?;
    if y.last_dim() < 2 {
        return Err(SeedError::Input("entropy loss needs a horizon of at least 2".into()));
    }
    let a = row_entropies(y)?;
    let b = row_entropies(yhat)?;
    let sq: f64 = a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum();
    Ok(sq / a.len() as f64)
}

pub fn total_loss(y: &Tensor, yhat: &Tensor, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    let pred = loss_pred(y, yhat)?;
    if lambda == 0.0 {
        return Ok(pred);
    }
    Ok(pred + lambda * loss_spen(y, yhat)?)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(SeedError::config(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    Ok(())
}

/// Loss terms recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub pred: Var,
    pub spen: Option<Var>,
}

/// Differentiable `total_loss` with respect to the prediction variable.
pub fn total_loss_var(tape: &mut Tape, yhat: Var, y: &Tensor, lambda: f64) -> Result<LossVars> {
    check_lambda(lambda)?;
    check_pair(y, tape.value(yhat))?;
    let target = tape.constant(y.clone());
    let diff = tape.sub(yhat, target)?;
    let sq = tape.mul(diff, diff)?;
    let pred = tape.mean_all(sq);
    if lambda == 0.0 {
        return Ok(LossVars {
            total: pred,
            pred,
            spen: None,
        });
    }
    let ey = row_entropies(y)?;
    let ey = tape.constant(Tensor::new(y.shape()[..y.ndim() - 1].to_vec(), ey)?);
    let eh = spectral_entropy_var(tape, yhat, None)?;
    let d = tape.sub(eh, ey)?;
    let d2 = tape.mul(d, d)?;
    let spen = tape.mean_all(d2);
    let weighted = tape.scale(spen, lambda);
    let total = tape.add(pred, weighted)?;
    Ok(LossVars {
        total,
        pred,
        spen: Some(spen),
    })
}

// ---------------------------------------------------------------------------
// Optimizer

#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, learning_rate: f64) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update; parameters without a gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) -> Result<()> {
        if grads.len() != self.m.len() || store.len() != self.m.len() {
            return Err(SeedError::Internal("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.eps);
        for (((param, g), m), v) in store.tensors_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let Some(g) = g else { continue };
            let p = param.data_mut();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                let gi = g.data()[i];
                md[i] = b1 * md[i] + (1.0 - b1) * gi;
                vd[i] = b2 * vd[i] + (1.0 - b2) * gi * gi;
                p[i] -= lr * (md[i] / c1) / ((vd[i] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Configuration and reports

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub patience: usize,
    pub seed: u64,
    /// Evaluation batch size.
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            lambda: 0.1,
            patience: 3,
            seed: 0,
            eval_batch: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_batch == 0 {
            return Err(SeedError::config("batch sizes must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(SeedError::config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.patience == 0 {
            return Err(SeedError::config("patience must be at least 1"));
        }
        check_lambda(self.lambda)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mse: f64,
    pub mae: f64,
    pub horizon: usize,
    pub epochs: usize,
    pub seconds: f64,
    pub per_horizon_mse: Vec<f64>,
    pub windows: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub train_loss: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub val_mse: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
}

impl MetricsReport {
    /// The report with wall-clock time zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        Self {
            seconds: 0.0,
            ..self.clone()
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation

/// Metrics of an arbitrary forecaster mapping `[B, C, L]` lookbacks to
/// `[B, C, T]` forecasts over every stride-1 window of `segment`.
pub fn evaluate_with<F>(segment: &Segment, lookback: usize, horizon: usize, batch: usize, forecast: F) -> Result<MetricsReport>
where
    F: Fn(&Tensor) -> Result<Tensor> + Sync,
{
    let start = Instant::now();
    let starts = segment.window_starts(lookback, horizon, 1)?;
    let partials: Vec<(Vec<f64>, f64)> = starts
        .par_chunks(batch.max(1))
        .map(|chunk| {
            let (x, y) = segment.batch(chunk, lookback, horizon);
            let yhat = forecast(&x)?;
            check_pair(&y, &yhat)?;
            let mut sq = vec![0.0; horizon];
            let mut abs = 0.0;
            for (i, (a, b)) in y.data().iter().zip(yhat.data()).enumerate() {
                let e = b - a;
                sq[i % horizon] += e * e;
                abs += e.abs();
            }
            Ok((sq, abs))
        })
        .collect::<Result<_>>()?;
    let mut sq = vec![0.0; horizon];
    let mut abs = 0.0;
    for (s, a) in partials {
        sq.iter_mut().zip(&s).for_each(|(t, v)| *t += v);
        abs += a;
    }
    let per_step = (starts.len() * segment.n_vars()) as f64;
    let total = per_step * horizon as f64;
    let mse = sq.iter().sum::<f64>() / total;
    if !mse.is_finite() {
        return Err(SeedError::Numeric("evaluation produced non-finite errors".into()));
    }
    Ok(MetricsReport {
        mse,
        mae: abs / total,
        horizon,
        epochs: 0,
        seconds: start.elapsed().as_secs_f64(),
        per_horizon_mse: sq.iter().map(|s| s / per_step).collect(),
        windows: starts.len(),
        train_loss: Vec::new(),
        val_mse: Vec::new(),
        best_epoch: None,
    })
}

pub fn evaluate(model: &SeedModel, segment: &Segment, batch: usize) -> Result<MetricsReport> {
    let cfg = model.config();
    evaluate_with(segment, cfg.lookback, cfg.horizon, batch, |x| model.forward_batch(x))
}

/// Repeats the last lookback value over the horizon.
pub fn persistence_forecast(x: &Tensor, horizon: usize) -> Tensor {
    let l = x.last_dim();
    let rows = x.numel() / l;
    let d = x.data();
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = horizon;
    Tensor::from_fn(&shape, |i| d[(i / horizon) * l + l - 1]).reshape(&shape).unwrap_or_else(|_| Tensor::zeros(&[rows, horizon]))
}

pub fn evaluate_persistence(segment: &Segment, lookback: usize, horizon: usize) -> Result<MetricsReport> {
    evaluate_with(segment, lookback, horizon, 256, |x| Ok(persistence_forecast(x, horizon)))
}

// ---------------------------------------------------------------------------
// Training

/// Progress information passed to the per-epoch callback.
#[derive(Clone, Debug)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: f64,
    pub improved: bool,
}

pub fn train(model: SeedModel, splits: &Splits, cfg: &TrainConfig) -> Result<(SeedModel, MetricsReport)> {
    train_with(model, splits, cfg, |_| {})
}

/// Adam on shuffled stride-1 training windows with early stopping on
/// validation MSE; the best validation weights are restored before the
/// test evaluation.
pub fn train_with(
    mut model: SeedModel,
    splits: &Splits,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(SeedModel, MetricsReport)> {
    cfg.validate()?;
    let started = Instant::now();
    let (lookback, horizon) = (model.config().lookback, model.config().horizon);
    if splits.train.n_vars() != model.config().n_vars {
        return Err(SeedError::config(format!(
            "model expects {} variables, data has {}",
            model.config().n_vars,
            splits.train.n_vars()
        )));
    }
    let mut starts = splits.train.window_starts(lookback, horizon, 1)?;
    splits.val.window_starts(lookback, horizon, 1)?;
    splits.test.window_starts(lookback, horizon, 1)?;

    let root = RngState::new(cfg.seed);
    let mut shuffle_rng = root.fork(STREAM_SHUFFLE);
    let mut dropout_rng = root.fork(STREAM_DROPOUT);
    let mut adam = Adam::new(model.store(), cfg.learning_rate);

    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut train_losses = Vec::new();
    let mut val_history = Vec::new();
    let mut stale = 0;
    for epoch in 1..=cfg.epochs {
        shuffle_rng.shuffle(&mut starts);
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for (step, chunk) in starts.chunks(cfg.batch_size).enumerate() {
            let (x, y) = splits.train.batch(chunk, lookback, horizon);
            let mut tape = Tape::new();
            let bound = model.store().bind(&mut tape, true);
            let mut opts = ForwardOptions {
                dropout_rng: Some(&mut dropout_rng),
                ..ForwardOptions::default()
            };
            let out = model.forward_var(&mut tape, &bound, &x, &mut opts)?;
            let loss = total_loss_var(&mut tape, out.prediction, &y, cfg.lambda)?;
            let value = tape.value(loss.total).item();
            if !value.is_finite() {
                return Err(SeedError::Divergence {
                    epoch,
                    step: step + 1,
                    loss: value,
                });
            }
            let mut grads = tape.backward(loss.total)?;
            let grads: Vec<Option<Tensor>> = bound.vars().iter().map(|v| grads.take(*v)).collect();
            if grads.iter().flatten().any(|g| !g.all_finite()) {
                return Err(SeedError::Divergence {
                    epoch,
                    step: step + 1,
                    loss: f64::NAN,
                });
            }
            adam.step(model.store_mut(), &grads)?;
            loss_sum += value;
            steps += 1;
        }
        let train_loss = loss_sum / steps.max(1) as f64;
        let val = evaluate(&model, &splits.val, cfg.eval_batch)?.mse;
        train_losses.push(train_loss);
        val_history.push(val);
        let improved = best.as_ref().is_none_or(|(b, _, _)| val < *b);
        on_epoch(&EpochLog {
            epoch,
            train_loss,
            val_mse: val,
            improved,
        });
        if improved {
            best = Some((val, epoch, model.store().clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let best_epoch = best.as_ref().map(|(_, e, _)| *e);
    if let Some((_, _, store)) = best {
        *model.store_mut() = store;
    }
    let mut report = evaluate(&model, &splits.test, cfg.eval_batch)?;
    report.epochs = train_losses.len();
    report.train_loss = train_losses;
    report.val_mse = val_history;
    report.best_epoch = best_epoch;
    report.seconds = started.elapsed().as_secs_f64();
    Ok((model, report))
}
