use crate::diff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Static hyper-connection weights wrapping one block.
#[derive(Debug, Clone, Copy)]
pub struct HyperParams {
    /// Width connections `[n, n]`.
    pub a: Var,
    /// Block input weights `[n]`.
    pub beta: Var,
    /// Block output weights `[n]`.
    pub gamma: Var,
}

/// Applies `block` under hyper-connections.
///
/// `streams` has shape `[n, ...]`; the block sees and returns one stream's
/// shape. Returns `A·S + γ ⊗ block(βᵀS)`.
pub fn hyper_apply<T, F>(tape: &mut Tape<T>, streams: Var, prm: &HyperParams, block: F) -> Result<Var>
where
    T: Scalar,
    F: FnOnce(&mut Tape<T>, Var) -> Result<Var>,
{
    let shape = tape.shape(streams).to_vec();
    let n = shape[0];
    if tape.shape(prm.a) != [n, n] || tape.shape(prm.beta) != [n] || tape.shape(prm.gamma) != [n] {
        return Err(Error::Shape(format!("hyper-connection weights do not match {n} streams")));
    }
    let rest: usize = shape[1..].iter().product();
    let flat = tape.reshape(streams, &[n, rest])?;
    let mixed = tape.matmul(prm.a, flat)?;
    let beta = tape.reshape(prm.beta, &[1, n])?;
    let u = tape.matmul(beta, flat)?;
    let u = tape.reshape(u, &shape[1..])?;
    let o = block(tape, u)?;
    if tape.shape(o) != &shape[1..] {
        return Err(Error::Shape(format!("block changed stream shape to {:?}", tape.shape(o))));
    }
    let o = tape.reshape(o, &[1, rest])?;
    let gamma = tape.reshape(prm.gamma, &[n, 1])?;
    let o = tape.mul(gamma, o)?;
    let out = tape.add(mixed, o)?;
    tape.reshape(out, &shape)
}

/// Replicates one state into `n` identical streams.
pub fn init_streams<T: Scalar>(tape: &mut Tape<T>, x: Var, n: usize) -> Result<Var> {
    let mut shape = vec![1];
    shape.extend_from_slice(tape.shape(x));
    let x = tape.reshape(x, &shape)?;
    shape[0] = n;
    tape.expand(x, &shape)
}

/// Arithmetic mean of the streams.
pub fn merge_streams<T: Scalar>(tape: &mut Tape<T>, streams: Var) -> Result<Var> {
    let n = tape.shape(streams)[0];
    let s = tape.sum_axis(streams, 0)?;
    Ok(tape.scale(s, T::one() / T::lit(n as f64)))
}
