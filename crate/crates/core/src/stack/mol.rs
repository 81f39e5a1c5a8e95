use crate::diff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One mixture-of-linears layer.
#[derive(Debug, Clone, Copy)]
pub struct MolParams {
    /// Gate map `[in, E]`.
    pub w_g: Var,
    /// Expert weights `[E, in, out]`.
    pub w: Var,
    /// Expert biases `[E, out]`.
    pub b: Var,
}

/// Per-token gate weights `softmax(x · W_g)`, shape `[..., E]`.
pub fn mol_gate<T: Scalar>(tape: &mut Tape<T>, x: Var, prm: &MolParams) -> Result<Var> {
    let logits = tape.matmul(x, prm.w_g)?;
    tape.softmax_last(logits, None)
}

/// Dense mixture `Σ_e g_e (x · W_e + b_e)`.
pub fn mol_linear<T: Scalar>(tape: &mut Tape<T>, x: Var, prm: &MolParams) -> Result<Var> {
    let ws = tape.shape(prm.w).to_vec();
    let (e, inp, out) = (ws[0], ws[1], ws[2]);
    let xs = tape.shape(x).to_vec();
    if xs.last() != Some(&inp) {
        return Err(Error::Shape(format!("input {xs:?} does not feed experts of width {inp}")));
    }
    let g = mol_gate(tape, x, prm)?;
    // all experts in one product: [in, E·out]
    let w = tape.permute(prm.w, &[1, 0, 2])?;
    let w = tape.reshape(w, &[inp, e * out])?;
    let y = tape.matmul(x, w)?;
    let mut split = xs.clone();
    *split.last_mut().unwrap() = e;
    split.push(out);
    let y = tape.reshape(y, &split)?;
    let y = tape.add(y, prm.b)?;
    let mut gshape = split.clone();
    *gshape.last_mut().unwrap() = 1;
    let g = tape.reshape(g, &gshape)?;
    let y = tape.mul(y, g)?;
    tape.sum_axis(y, split.len() - 2)
}

/// `MoL → GELU → MoL`.
pub fn mmlp_forward<T: Scalar>(tape: &mut Tape<T>, x: Var, first: &MolParams, second: &MolParams) -> Result<Var> {
    let h = mol_linear(tape, x, first)?;
    let h = tape.gelu(h);
    mol_linear(tape, h, second)
}
