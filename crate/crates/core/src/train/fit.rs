use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{NormStats, WindowSet};
use crate::diff::{Adam, AdamConfig, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stack::FlowNet;

use super::metrics::{MetricAccumulator, Metrics, Normalized};
use super::schedule::{lr_at_epoch, EarlyStopping, TrainConfig};

/// Anything that maps normalized `[B, N, T_in]` windows to `[B, N, τ]`.
pub trait Forecaster<T: Scalar> {
    fn predict(&self, params: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>>;

    /// Normalized-scale MAE and its gradient per parameter, in store order.
    fn loss_and_grads(&self, params: &ParamStore<T>, x: &Tensor<T>, y: &Tensor<T>) -> Result<(T, Vec<Tensor<T>>)>;
}

impl<T: Scalar> Forecaster<T> for FlowNet<T> {
    fn predict(&self, params: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        FlowNet::predict(self, params, x)
    }

    fn loss_and_grads(&self, params: &ParamStore<T>, x: &Tensor<T>, y: &Tensor<T>) -> Result<(T, Vec<Tensor<T>>)> {
        FlowNet::loss_and_grads(self, params, x, y)
    }
}

/// Repeats the last observed value over the horizon.
#[derive(Debug, Clone, Copy)]
pub struct CopyLast {
    pub horizon: usize,
}

/// Predicts each node's training mean, which is zero on the normalized scale.
#[derive(Debug, Clone, Copy)]
pub struct HistoricalMean {
    pub horizon: usize,
}

impl<T: Scalar> Forecaster<T> for CopyLast {
    fn predict(&self, _: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        let t = s[2];
        let h = self.horizon;
        Tensor::new(vec![s[0], s[1], h], x.data().chunks(t).flat_map(|row| std::iter::repeat(row[t - 1]).take(h)).collect())
    }

    fn loss_and_grads(&self, params: &ParamStore<T>, x: &Tensor<T>, y: &Tensor<T>) -> Result<(T, Vec<Tensor<T>>)> {
        baseline_loss(self, params, x, y)
    }
}

impl<T: Scalar> Forecaster<T> for HistoricalMean {
    fn predict(&self, _: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(Tensor::zeros(&[x.shape()[0], x.shape()[1], self.horizon]))
    }

    fn loss_and_grads(&self, params: &ParamStore<T>, x: &Tensor<T>, y: &Tensor<T>) -> Result<(T, Vec<Tensor<T>>)> {
        baseline_loss(self, params, x, y)
    }
}

fn baseline_loss<T: Scalar, F: Forecaster<T>>(f: &F, params: &ParamStore<T>, x: &Tensor<T>, y: &Tensor<T>) -> Result<(T, Vec<Tensor<T>>)> {
    let p = f.predict(params, x)?;
    let n = T::lit(p.len() as f64);
    let loss = p.data().iter().zip(y.data()).map(|(a, b)| (*a - *b).abs()).sum::<T>() / n;
    Ok((loss, Vec::new()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStopping,
    MaxEpochs,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: f64,
    pub val_rmse: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub stop_reason: StopReason,
}

impl FitReport {
    /// The report with wall-clock times zeroed, for run-to-run comparison.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.epochs.iter_mut().for_each(|e| e.seconds = 0.0);
        r
    }
}

fn to_scalar<T: Scalar>(t: &Tensor<f64>) -> Tensor<T> {
    t.cast()
}

/// Denormalized metrics of `model` over all windows.
pub fn evaluate<T: Scalar, F: Forecaster<T>>(
    model: &F,
    params: &ParamStore<T>,
    windows: &WindowSet,
    stats: &NormStats,
    batch_size: usize,
) -> Result<Metrics> {
    if windows.is_empty() {
        return Err(Error::Data("no windows to evaluate".into()));
    }
    if stats.nodes() != windows.nodes() {
        return Err(Error::Data(format!("normalization covers {} nodes, windows have {}", stats.nodes(), windows.nodes())));
    }
    let mut acc = MetricAccumulator::default();
    let idx: Vec<usize> = (0..windows.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = windows.select(chunk);
        let pred = model.predict(params, &to_scalar(&x))?.cast::<f64>();
        let y = Normalized(y).denormalize(stats)?;
        let pred = Normalized(pred).denormalize(stats)?;
        acc.add(&y, &pred)?;
    }
    acc.finish()
}

fn clip(grads: &mut [Tensor<impl Scalar>], cap: f64) {
    let norm: f64 = grads.iter().flat_map(|g| g.data()).map(|v| v.to_f64().unwrap().powi(2)).sum::<f64>().sqrt();
    if norm > cap {
        let s = cap / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v = *v * num_traits::cast(s).unwrap();
            }
        }
    }
}

/// Mini-batch Adam on normalized MAE with validation-based early stopping.
///
/// Returns the parameters of the epoch with the lowest validation MAE.
pub fn fit<T: Scalar, F: Forecaster<T>>(
    model: &F,
    init: ParamStore<T>,
    train: &WindowSet,
    val: &WindowSet,
    cfg: &TrainConfig,
    stats: &NormStats,
) -> Result<(ParamStore<T>, FitReport)> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("training and validation splits must both contain windows".into()));
    }
    let mut params = init;
    let mut best = params.clone();
    let mut adam = Adam::new(&params, AdamConfig::default());
    adam.strict = false;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stopper = EarlyStopping::new(cfg.early_stop_start, cfg.patience);
    let mut records = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stop_reason = StopReason::MaxEpochs;

    let diverged = |epoch: usize, reason: String, records: &[EpochRecord], stopper: &EarlyStopping| {
        let (best_epoch, best_val_mae) = stopper.best().unwrap_or((0, f64::INFINITY));
        let report = FitReport { epochs: records.to_vec(), best_epoch, best_val_mae, stop_reason: StopReason::Diverged };
        Error::Diverged { epoch, reason, report: Box::new(report) }
    };

    for epoch in 0..cfg.max_epochs {
        let start = Instant::now();
        let lr = lr_at_epoch(epoch, cfg);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (x, y) = train.select(batch);
            let (loss, mut grads) = model.loss_and_grads(&params, &to_scalar(&x), &to_scalar(&y))?;
            let loss = loss.to_f64().unwrap();
            if !loss.is_finite() {
                return Err(diverged(epoch, format!("training loss is {loss}"), &records, &stopper));
            }
            total += loss * batch.len() as f64;
            if let Some(cap) = cfg.grad_clip {
                clip(&mut grads, cap);
            }
            adam.step(&mut params, &grads, T::lit(lr))?;
        }
        let train_loss = total / train.len() as f64;
        let m = evaluate(model, &params, val, stats, cfg.batch_size)?;
        if !m.mae.is_finite() {
            return Err(diverged(epoch, format!("validation MAE is {}", m.mae), &records, &stopper));
        }
        if stopper.update(epoch, m.mae) {
            best = params.clone();
        }
        let rec = EpochRecord { epoch, train_loss, val_mae: m.mae, val_rmse: m.rmse, lr, seconds: start.elapsed().as_secs_f64() };
        debug!("epoch {epoch}: loss {train_loss:.5} val MAE {:.5} RMSE {:.5} lr {lr:e}", m.mae, m.rmse);
        records.push(rec);
        if stopper.should_stop(epoch) {
            stop_reason = StopReason::EarlyStopping;
            break;
        }
    }
    let (best_epoch, best_val_mae) = stopper.best().expect("at least one epoch ran");
    info!("best epoch {best_epoch} with val MAE {best_val_mae:.5} ({stop_reason:?})");
    Ok((best, FitReport { epochs: records, best_epoch, best_val_mae, stop_reason }))
}
