use crate::diff::Tensor;
use crate::error::{Error, Result};

/// Paired input/target windows cut from one contiguous split.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    /// `[B, N, T_in]`
    pub inputs: Tensor<f64>,
    /// `[B, N, T_out]`
    pub targets: Tensor<f64>,
    /// First input step of each window, relative to the split start.
    pub origins: Vec<usize>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn nodes(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn input_len(&self) -> usize {
        self.inputs.shape()[2]
    }

    pub fn horizon(&self) -> usize {
        self.targets.shape()[2]
    }

    /// Windows at the given positions, in order.
    pub fn select(&self, idx: &[usize]) -> (Tensor<f64>, Tensor<f64>) {
        (gather(&self.inputs, idx), gather(&self.targets, idx))
    }
}

fn gather(t: &Tensor<f64>, idx: &[usize]) -> Tensor<f64> {
    let row = t.len() / t.shape()[0];
    let mut data = Vec::with_capacity(idx.len() * row);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * row..(i + 1) * row]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    Tensor::new(shape, data).expect("gathered shape")
}

/// Number of windows `make_windows` yields.
pub fn window_count(steps: usize, input_len: usize, horizon: usize, stride: usize) -> usize {
    if stride == 0 || input_len + horizon > steps {
        0
    } else {
        (steps - input_len - horizon) / stride + 1
    }
}

/// Slides a window of `input_len + horizon` steps over a `[T, N]` series.
pub fn make_windows(data: &Tensor<f64>, input_len: usize, horizon: usize, stride: usize) -> Result<WindowSet> {
    if data.rank() != 2 {
        return Err(Error::Data(format!("expected [T, N] series, got {:?}", data.shape())));
    }
    let (t, n) = (data.shape()[0], data.shape()[1]);
    if stride == 0 || input_len == 0 || horizon == 0 {
        return Err(Error::Data("window lengths and stride must be positive".into()));
    }
    if input_len + horizon > t {
        return Err(Error::Data(format!("series of {t} steps is shorter than {input_len} + {horizon}")));
    }
    let count = window_count(t, input_len, horizon, stride);
    let d = data.data();
    let mut inputs = Vec::with_capacity(count * n * input_len);
    let mut targets = Vec::with_capacity(count * n * horizon);
    let origins: Vec<usize> = (0..count).map(|w| w * stride).collect();
    for &o in &origins {
        for i in 0..n {
            inputs.extend((o..o + input_len).map(|s| d[s * n + i]));
        }
        for i in 0..n {
            targets.extend((o + input_len..o + input_len + horizon).map(|s| d[s * n + i]));
        }
    }
    Ok(WindowSet {
        inputs: Tensor::new(vec![count, n, input_len], inputs)?,
        targets: Tensor::new(vec![count, n, horizon], targets)?,
        origins,
    })
}
