use log::warn;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

use super::params::ParamStore;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// Gradients contained NaN/Inf; parameters and moments untouched.
    Skipped,
}

/// Adam with bias correction; one moment pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
    /// Return an error on non-finite gradients instead of skipping the step.
    pub strict: bool,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        let m: Vec<_> = params.iter().map(|(_, p)| Tensor::zeros(p.shape())).collect();
        Self { config, v: m.clone(), m, t: 0, strict: cfg!(debug_assertions) }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.v
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>], lr: T) -> Result<StepOutcome> {
        if grads.len() != params.len() || grads.len() != self.m.len() {
            return Err(shape_err!("adam: {} params, {} grads, {} moments", params.len(), grads.len(), self.m.len()));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(shape_err!("adam: gradient for `{name}` has shape {:?}, expected {:?}", g.shape(), p.shape()));
            }
        }
        if let Some((name, _)) = params.iter().zip(grads).find(|(_, g)| !g.all_finite()).map(|(p, _)| p) {
            if self.strict {
                return Err(Error::NonFinite(format!("gradient of `{name}`")));
            }
            warn!("non-finite gradient in `{name}`; skipping optimizer step");
            return Ok(StepOutcome::Skipped);
        }

        self.t += 1;
        let b1 = T::lit(self.config.beta1);
        let b2 = T::lit(self.config.beta2);
        let eps = T::lit(self.config.eps);
        let t = self.t as i32;
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        for (((p, g), m), v) in params.tensors_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(StepOutcome::Applied)
    }
}
