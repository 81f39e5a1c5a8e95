use serde::{Deserialize, Serialize};

use crate::diff::{strides, Tensor};
use crate::error::{Error, Result};

/// Smallest admissible per-node standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-8;

/// Per-node mean and population standard deviation of the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZScoreMode {
    FitApply,
    Apply,
    Invert,
}

impl NormStats {
    /// Statistics of a `[T, N]` series (columns are nodes).
    pub fn fit(series: &Tensor<f64>) -> Result<Self> {
        if series.rank() != 2 {
            return Err(Error::Data(format!("expected [T, N] series, got {:?}", series.shape())));
        }
        let (t, n) = (series.shape()[0], series.shape()[1]);
        let d = series.data();
        let mut mu = vec![0.0; n];
        let mut sigma = vec![0.0; n];
        for i in 0..n {
            let m = (0..t).map(|r| d[r * n + i]).sum::<f64>() / t as f64;
            let var = (0..t).map(|r| (d[r * n + i] - m).powi(2)).sum::<f64>() / t as f64;
            mu[i] = m;
            sigma[i] = var.sqrt().max(SIGMA_FLOOR);
        }
        Ok(Self { mu, sigma })
    }

    pub fn nodes(&self) -> usize {
        self.mu.len()
    }

    fn per_node(&self, data: &Tensor<f64>, node_axis: usize, f: impl Fn(f64, f64, f64) -> f64) -> Result<Tensor<f64>> {
        if node_axis >= data.rank() || data.shape()[node_axis] != self.nodes() {
            return Err(Error::Data(format!(
                "statistics for {} nodes cannot apply to axis {node_axis} of {:?}",
                self.nodes(),
                data.shape()
            )));
        }
        let stride = strides(data.shape())[node_axis];
        let n = self.nodes();
        let mut out = data.clone();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            let i = (k / stride) % n;
            *v = f(*v, self.mu[i], self.sigma[i]);
        }
        Ok(out)
    }

    /// `(x − μ_i) / σ_i` along `node_axis`.
    pub fn apply(&self, data: &Tensor<f64>, node_axis: usize) -> Result<Tensor<f64>> {
        self.per_node(data, node_axis, |x, m, s| (x - m) / s)
    }

    /// `x · σ_i + μ_i` along `node_axis`.
    pub fn invert(&self, data: &Tensor<f64>, node_axis: usize) -> Result<Tensor<f64>> {
        self.per_node(data, node_axis, |x, m, s| x * s + m)
    }
}

/// Z-score a `[T, N]` series. `FitApply` derives the statistics from `data`
/// itself; the other modes require `stats`.
pub fn zscore(mode: ZScoreMode, data: &Tensor<f64>, stats: Option<&NormStats>) -> Result<(Tensor<f64>, NormStats)> {
    let stats = match (mode, stats) {
        (ZScoreMode::FitApply, _) => NormStats::fit(data)?,
        (_, Some(s)) => s.clone(),
        (_, None) => return Err(Error::Data("z-score apply/invert requires statistics".into())),
    };
    let out = match mode {
        ZScoreMode::FitApply | ZScoreMode::Apply => stats.apply(data, 1)?,
        ZScoreMode::Invert => stats.invert(data, 1)?,
    };
    Ok((out, stats))
}
