use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub half_every: usize,
    pub schedule_end: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_start: usize,
    pub patience: usize,
    pub seed: u64,
    /// Global gradient-norm cap; off when absent.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            half_every: 20,
            schedule_end: 60,
            batch_size: 8,
            max_epochs: 100,
            early_stop_start: 20,
            patience: 10,
            seed: 0,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be positive");
        }
        if self.half_every == 0 || self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("half_every, batch_size, max_epochs and patience must be positive");
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad("grad_clip must be positive");
            }
        }
        Ok(())
    }
}

/// Step-halving schedule, frozen after `schedule_end`.
pub fn lr_at_epoch(epoch: usize, cfg: &TrainConfig) -> f64 {
    let halvings = epoch.min(cfg.schedule_end) / cfg.half_every;
    cfg.lr0 * 0.5f64.powi(halvings as i32)
}

/// Patience rule on the validation MAE.
///
/// Improvements are tracked from the first epoch; stopping is only
/// considered from `start` on.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    start: usize,
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
}

impl EarlyStopping {
    pub fn new(start: usize, patience: usize) -> Self {
        Self { start, patience, best: f64::INFINITY, best_epoch: None }
    }

    /// Records the metric of `epoch`; returns whether it is a new best.
    pub fn update(&mut self, epoch: usize, value: f64) -> bool {
        if value < self.best {
            self.best = value;
            self.best_epoch = Some(epoch);
            true
        } else {
            false
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best_epoch.map(|e| (e, self.best))
    }

    pub fn should_stop(&self, epoch: usize) -> bool {
        if epoch < self.start + self.patience {
            return false;
        }
        let since = self.best_epoch.unwrap_or(0).max(self.start);
        epoch - since >= self.patience
    }
}
