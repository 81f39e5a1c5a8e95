//! Metrics, learning-rate schedule, the training loop and evaluation.

mod fit;
mod metrics;
mod schedule;

pub use fit::{evaluate, fit, CopyLast, EpochRecord, FitReport, Forecaster, HistoricalMean, StopReason};
pub use metrics::{compute_metrics, MetricAccumulator, Metrics, Normalized, Physical};
pub use schedule::{lr_at_epoch, EarlyStopping, TrainConfig};
