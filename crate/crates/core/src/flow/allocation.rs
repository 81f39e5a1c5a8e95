use crate::diff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::config::FlowMode;
use super::fold_heads;

/// Parameters producing origin/destination vectors.
#[derive(Debug, Clone, Copy)]
pub struct OdParams {
    /// `[2d, d]`
    pub w_aff: Var,
    pub b_aff: Var,
    pub ln_gain: Var,
    pub ln_bias: Var,
    /// `[d, d]`
    pub w_o: Var,
    pub b_o: Var,
    pub w_d: Var,
    pub b_d: Var,
    /// `[N, d']`
    pub e_origin: Var,
    pub e_dest: Var,
}

/// Origin and destination vectors, each `[B, h, N, P, d']`.
pub fn od_vectors<T: Scalar>(tape: &mut Tape<T>, aug: Var, prm: &OdParams, heads: usize, eps: T) -> Result<(Var, Var)> {
    let x = tape.matmul(aug, prm.w_aff)?;
    let x = tape.add(x, prm.b_aff)?;
    let x = tape.layer_norm_last(x, prm.ln_gain, prm.ln_bias, eps)?;
    let n = tape.shape(x)[1];
    let mut project = |w: Var, b: Var, e: Var| -> Result<Var> {
        let y = tape.matmul(x, w)?;
        let y = tape.add(y, b)?;
        let y = fold_heads(tape, y, heads)?;
        let dh = tape.shape(y)[4];
        if tape.shape(e) != [n, dh] {
            return Err(Error::Shape(format!("node embedding {:?} does not match [{n}, {dh}]", tape.shape(e))));
        }
        let e = tape.reshape(e, &[n, 1, dh])?;
        tape.add(y, e)
    };
    let o = project(prm.w_o, prm.b_o, prm.e_origin)?;
    let d = project(prm.w_d, prm.b_d, prm.e_dest)?;
    Ok((o, d))
}

/// Scaled, masked origin–destination affinities `[B, h, P, N, N]`.
pub fn flow_logits<T: Scalar>(tape: &mut Tape<T>, o: Var, d: Var, mask: Var) -> Result<Var> {
    let dh = tape.shape(o)[4];
    let o = tape.permute(o, &[0, 1, 3, 2, 4])?;
    let d = tape.permute(d, &[0, 1, 3, 4, 2])?;
    let q = tape.matmul(o, d)?;
    let q = tape.scale(q, T::one() / T::lit(dh as f64).sqrt());
    let m = tape.shape(mask).to_vec();
    let mask = tape.reshape(mask, &[m[0], 1, m[1], m[2], m[3]])?;
    tape.mul(q, mask)
}

/// Repeats a `[B, P, N, N]` support pattern over `heads`.
pub fn head_support(support: &[bool], batch: usize, heads: usize) -> Vec<bool> {
    let per = support.len() / batch;
    let mut out = Vec::with_capacity(support.len() * heads);
    for chunk in support.chunks(per) {
        for _ in 0..heads {
            out.extend_from_slice(chunk);
        }
    }
    out
}

/// Row-wise softmax of `q` restricted to the support set: `[B, h, P, N, N]`.
pub fn allocation_matrix<T: Scalar>(tape: &mut Tape<T>, q: Var, support: &[bool]) -> Result<Var> {
    let s = tape.shape(q).to_vec();
    let full = head_support(support, s[0], s[1]);
    let lam = tape.softmax_last(q, Some(&full))?;
    debug_assert!(tape.value(lam).data().chunks(s[4]).all(|row| {
        let total: f64 = row.iter().map(|v| v.to_f64().unwrap()).sum();
        (total - 1.0).abs() < 1e-6
    }));
    Ok(lam)
}

/// Flow update for one layer. Received flow at node `i` is `Σ_k Λ[k, i] Φ_a,k`.
pub fn flow_combine<T: Scalar>(tape: &mut Tape<T>, phi_o: Var, phi_a: Var, lam: Var, mode: FlowMode) -> Result<Var> {
    if tape.shape(phi_o) != tape.shape(phi_a) {
        return Err(Error::Shape(format!("flow tokens {:?} vs {:?}", tape.shape(phi_o), tape.shape(phi_a))));
    }
    if mode == FlowMode::WithoutAllocation {
        return Ok(phi_o);
    }
    let a = tape.permute(phi_a, &[0, 1, 3, 2, 4])?; // [B, h, P, N, d']
    let lt = tape.transpose_last2(lam)?;
    let recv = tape.matmul(lt, a)?;
    let recv = tape.permute(recv, &[0, 1, 3, 2, 4])?;
    match mode {
        FlowMode::Full => {
            let kept = tape.sub(phi_o, phi_a)?;
            tape.add(kept, recv)
        }
        FlowMode::WithoutRetained => Ok(recv),
        FlowMode::WithoutConservation => tape.add(phi_o, recv),
        FlowMode::WithoutAllocation => unreachable!(),
    }
}
