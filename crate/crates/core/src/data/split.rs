use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::error::{Error, Result};

use super::dataset::slice_rows;

/// How a series is partitioned chronologically into train/val/test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSpec {
    Ratios { train: f64, val: f64, test: f64 },
    /// Validation starts at `val_start`, test at `test_start`.
    Boundaries { val_start: usize, test_start: usize },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Ratios { train: 0.7, val: 0.1, test: 0.2 }
    }
}

impl SplitSpec {
    /// Resolves to `(val_start, test_start)` for a series of `steps`.
    pub fn boundaries(&self, steps: usize) -> Result<(usize, usize)> {
        let (v, t) = match *self {
            SplitSpec::Ratios { train, val, test } => {
                if [train, val, test].iter().any(|r| !(*r >= 0.0)) || (train + val + test - 1.0).abs() > 1e-9 {
                    return Err(Error::Data(format!("split ratios {train}/{val}/{test} must be nonnegative and sum to 1")));
                }
                let v = (steps as f64 * train).round() as usize;
                let t = (steps as f64 * (train + val)).round() as usize;
                (v, t)
            }
            SplitSpec::Boundaries { val_start, test_start } => (val_start, test_start),
        };
        if !(0 < v && v < t && t < steps) {
            return Err(Error::Data(format!("split boundaries ({v}, {t}) leave an empty part of {steps} steps")));
        }
        Ok((v, t))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Tensor<f64>,
    pub val: Tensor<f64>,
    pub test: Tensor<f64>,
    pub val_start: usize,
    pub test_start: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

impl Splits {
    pub fn part(&self, which: SplitPart) -> &Tensor<f64> {
        match which {
            SplitPart::Train => &self.train,
            SplitPart::Val => &self.val,
            SplitPart::Test => &self.test,
        }
    }
}

/// Contiguous chronological train/val/test partition of a `[T, N]` series.
pub fn split_dataset(data: &Tensor<f64>, spec: &SplitSpec) -> Result<Splits> {
    let steps = data.shape()[0];
    let (v, t) = spec.boundaries(steps)?;
    Ok(Splits {
        train: slice_rows(data, 0, v)?,
        val: slice_rows(data, v, t)?,
        test: slice_rows(data, t, steps)?,
        val_start: v,
        test_start: t,
    })
}
