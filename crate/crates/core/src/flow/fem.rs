use crate::diff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::fold_heads;

/// Parameters of one flow estimation module.
#[derive(Debug, Clone, Copy)]
pub struct FemParams {
    /// `[2d, d]`
    pub w_f: Var,
    /// `[d]`
    pub b_f: Var,
    /// Per-head query/key/value maps, each `[h, d', d']`.
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    /// `[d, d]`
    pub w_out: Var,
    /// `[d]`
    pub b_out: Var,
}

/// `[rows, P, P]` pattern allowing position `p` to see positions `<= p`.
pub fn causal_support(rows: usize, p: usize) -> Vec<bool> {
    let mut s = Vec::with_capacity(rows * p * p);
    for _ in 0..rows {
        for i in 0..p {
            s.extend((0..p).map(|j| j <= i));
        }
    }
    s
}

/// Causal multi-head self-attention over the patch axis, run independently
/// per node: `[B, N, P, 2d] → [B, h, N, P, d']`.
pub fn fem_forward<T: Scalar>(tape: &mut Tape<T>, aug: Var, prm: &FemParams, heads: usize) -> Result<Var> {
    let s = tape.shape(aug).to_vec();
    let (b, n, p) = (s[0], s[1], s[2]);
    let d = tape.shape(prm.w_f)[1];
    if d % heads != 0 {
        return Err(Error::Config(format!("d = {d} is not divisible by {heads} heads")));
    }
    let dh = d / heads;

    let x = tape.matmul(aug, prm.w_f)?;
    let x = tape.add(x, prm.b_f)?;
    let x = tape.reshape(x, &[b, n, p, heads, dh])?;
    let x = tape.permute(x, &[0, 1, 3, 2, 4])?; // [B, N, h, P, d']

    let q = tape.matmul(x, prm.w_q)?;
    let k = tape.matmul(x, prm.w_k)?;
    let v = tape.matmul(x, prm.w_v)?;
    let kt = tape.transpose_last2(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, T::one() / T::lit(dh as f64).sqrt());
    let attn = tape.softmax_last(scores, Some(&causal_support(b * n * heads, p)))?;
    let ctx = tape.matmul(attn, v)?;

    let ctx = tape.permute(ctx, &[0, 1, 3, 2, 4])?;
    let ctx = tape.reshape(ctx, &[b, n, p, d])?;
    let out = tape.matmul(ctx, prm.w_out)?;
    let out = tape.add(out, prm.b_out)?;
    fold_heads(tape, out, heads)
}
