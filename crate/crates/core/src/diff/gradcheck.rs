use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::params::{BoundParams, ParamStore};
use super::tape::{Tape, Var};

/// Per-tensor discrepancy between reverse-mode and central-difference gradients.
#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    /// `max|a − c| / max(max|a|, max|c|, 1e-12)` over the tensor's elements.
    pub rel_err: f64,
    pub abs_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_err).fold(0.0, f64::max)
    }

    pub fn max_abs_err(&self) -> f64 {
        self.tensors.iter().map(|t| t.abs_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

fn eval<T, F>(f: &F, params: &ParamStore<T>) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &BoundParams<'_, T>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.attach_frozen(&mut tape);
    let out = f(&mut tape, &bound)?;
    let v = tape.value(out).item().to_f64().unwrap();
    if !v.is_finite() {
        return Err(Error::NonFinite("objective evaluation".into()));
    }
    Ok(v)
}

/// Compares the tape gradient of the scalar objective `f` with central
/// differences of step `eps` for every element of every parameter.
pub fn grad_check<T, F>(f: F, params: &ParamStore<T>, eps: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &BoundParams<'_, T>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.attach(&mut tape);
    let loss = f(&mut tape, &bound)?;
    if !tape.value(loss).item().is_finite() {
        return Err(Error::NonFinite("objective evaluation".into()));
    }
    let mut grads = tape.backward(loss)?;
    let analytic = bound.collect(&mut grads);

    let mut probe = params.clone();
    let names: Vec<String> = params.names().map(str::to_owned).collect();
    let mut tensors = Vec::with_capacity(names.len());
    for (name, a) in names.iter().zip(&analytic) {
        let mut max_diff = 0.0f64;
        let mut max_mag = 0.0f64;
        for i in 0..a.len() {
            let orig = probe.get(name).unwrap().data()[i];
            let step = T::lit(eps);
            probe.get_mut(name).unwrap().data_mut()[i] = orig + step;
            let up = eval(&f, &probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig - step;
            let down = eval(&f, &probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let an = a.data()[i].to_f64().unwrap();
            max_diff = max_diff.max((an - numeric).abs());
            max_mag = max_mag.max(an.abs()).max(numeric.abs());
        }
        tensors.push(TensorCheck { name: name.clone(), rel_err: max_diff / max_mag.max(1e-12), abs_err: max_diff });
    }
    Ok(GradCheckReport { tensors })
}
