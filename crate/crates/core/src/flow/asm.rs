use crate::diff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Perception radii and soft spatial mask of one forward pass.
#[derive(Debug, Clone)]
pub struct MaskBundle {
    /// `[B, N, P]`, strictly positive.
    pub radii: Var,
    /// `[B, P, N, N]`, entries in (0, 1).
    pub mask: Var,
    /// `mask >= 0.5`, i.e. `d_ij <= r_i`; the diagonal is always set.
    pub support: Vec<bool>,
}

/// `softplus(aug · W_h + b_r)`: `[B, N, P, 2d] → [B, N, P]`.
pub fn compute_radius<T: Scalar>(tape: &mut Tape<T>, aug: Var, w_h: Var, b_r: Var) -> Result<Var> {
    let shape = tape.shape(aug).to_vec();
    let pre = tape.matmul(aug, w_h)?;
    let pre = tape.add(pre, b_r)?;
    let r = tape.softplus(pre);
    tape.reshape(r, &shape[..3])
}

/// `sigmoid(r_i − d_ij)`: radii `[B, N, P]`, distances `[N, N]` → `[B, P, N, N]`.
pub fn compute_mask<T: Scalar>(tape: &mut Tape<T>, radii: Var, dist: Var) -> Result<Var> {
    let s = tape.shape(radii).to_vec();
    let (b, n, p) = (s[0], s[1], s[2]);
    if tape.shape(dist) != [n, n] {
        return Err(Error::Shape(format!("distance matrix {:?} does not match {n} nodes", tape.shape(dist))));
    }
    let r = tape.permute(radii, &[0, 2, 1])?;
    let r = tape.reshape(r, &[b, p, n, 1])?;
    let gap = tape.sub(r, dist)?;
    Ok(tape.sigmoid(gap))
}

/// Hard neighborhood `mask >= 0.5`, with every node its own neighbor.
pub fn support_from_mask<T: Scalar>(mask: &[T], nodes: usize) -> Vec<bool> {
    let half = T::lit(0.5);
    mask.iter()
        .enumerate()
        .map(|(k, &m)| {
            let (i, j) = ((k / nodes) % nodes, k % nodes);
            i == j || m >= half
        })
        .collect()
}

pub fn adaptive_mask<T: Scalar>(tape: &mut Tape<T>, aug: Var, w_h: Var, b_r: Var, dist: Var) -> Result<MaskBundle> {
    let radii = compute_radius(tape, aug, w_h, b_r)?;
    let mask = compute_mask(tape, radii, dist)?;
    let n = tape.shape(dist)[0];
    let support = support_from_mask(tape.value(mask).data(), n);
    Ok(MaskBundle { radii, mask, support })
}
