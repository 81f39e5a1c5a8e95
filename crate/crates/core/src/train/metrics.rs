use serde::{Deserialize, Serialize};

use crate::data::NormStats;
use crate::diff::Tensor;
use crate::error::{Error, Result};

/// Values on the z-scored scale the model trains on.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized(pub Tensor<f64>);

/// Values in original data units; the only kind metrics accept.
#[derive(Debug, Clone, PartialEq)]
pub struct Physical(pub Tensor<f64>);

impl Normalized {
    /// Inverts the z-score of a `[B, N, T]` tensor.
    pub fn denormalize(&self, stats: &NormStats) -> Result<Physical> {
        Ok(Physical(stats.invert(&self.0, 1)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
}

pub fn compute_metrics(y: &Physical, y_hat: &Physical) -> Result<Metrics> {
    let mut acc = MetricAccumulator::default();
    acc.add(y, y_hat)?;
    acc.finish()
}

/// Running sums for metrics over several batches.
#[derive(Debug, Clone, Default)]
pub struct MetricAccumulator {
    abs: f64,
    sq: f64,
    count: usize,
}

impl MetricAccumulator {
    pub fn add(&mut self, y: &Physical, y_hat: &Physical) -> Result<()> {
        if y.0.shape() != y_hat.0.shape() {
            return Err(Error::Shape(format!("targets {:?} vs predictions {:?}", y.0.shape(), y_hat.0.shape())));
        }
        for (a, b) in y.0.data().iter().zip(y_hat.0.data()) {
            let e = a - b;
            self.abs += e.abs();
            self.sq += e * e;
        }
        self.count += y.0.len();
        Ok(())
    }

    pub fn finish(&self) -> Result<Metrics> {
        if self.count == 0 {
            return Err(Error::Data("no values to score".into()));
        }
        let n = self.count as f64;
        Ok(Metrics { mae: self.abs / n, rmse: (self.sq / n).sqrt() })
    }
}
