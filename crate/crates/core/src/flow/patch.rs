use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Number of patches of length `patch_len` at `stride` over `steps`.
pub fn patch_count(steps: usize, patch_len: usize, stride: usize) -> Result<usize> {
    if patch_len == 0 || stride == 0 || patch_len > steps || (steps - patch_len) % stride != 0 {
        return Err(Error::Config(format!(
            "cannot tile {steps} steps with patches of {patch_len} at stride {stride}"
        )));
    }
    Ok((steps - patch_len) / stride + 1)
}

/// Cuts `[B, N, T]` series into `[B, N, P, M]` patches; patch `p` covers
/// steps `[p·S, p·S + M)`.
pub fn partition_patches<T: Scalar>(x: &Tensor<T>, patch_len: usize, stride: usize) -> Result<Tensor<T>> {
    if x.rank() != 3 {
        return Err(Error::Shape(format!("expected [B, N, T] input, got {:?}", x.shape())));
    }
    let (b, n, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let p = patch_count(t, patch_len, stride)?;
    let mut out = Vec::with_capacity(b * n * p * patch_len);
    for series in x.data().chunks(t) {
        for k in 0..p {
            out.extend_from_slice(&series[k * stride..k * stride + patch_len]);
        }
    }
    Tensor::new(vec![b, n, p, patch_len], out)
}

/// `patches · W_e + b_e + pos`: `[B, N, P, M] → [B, N, P, d]`.
pub fn embed_patches<T: Scalar>(tape: &mut Tape<T>, patches: Var, w_e: Var, b_e: Var, pos: Var) -> Result<Var> {
    let h = tape.matmul(patches, w_e)?;
    let h = tape.add(h, b_e)?;
    tape.add(h, pos)
}

/// Appends the per-node embedding to every patch: `[B, N, P, d] → [B, N, P, 2d]`.
pub fn augment_features<T: Scalar>(tape: &mut Tape<T>, feats: Var, node_emb: Var) -> Result<Var> {
    let shape = tape.shape(feats).to_vec();
    let (n, d) = (shape[1], shape[3]);
    if tape.shape(node_emb) != [n, d] {
        return Err(Error::Shape(format!("node embedding {:?} does not match [{n}, {d}]", tape.shape(node_emb))));
    }
    let e = tape.reshape(node_emb, &[n, 1, d])?;
    let e = tape.expand(e, &shape)?;
    tape.concat_last(&[feats, e])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(b: usize, n: usize, t: usize) -> Tensor<f64> {
        Tensor::from_fn(&[b, n, t], |k| k as f64)
    }

    #[test]
    fn patch_counts() {
        assert_eq!(patch_count(12, 4, 4).unwrap(), 3);
        assert_eq!(patch_count(12, 4, 2).unwrap(), 5);
        assert!(patch_count(12, 5, 2).is_err());
        // tokens shrink by the stride factor relative to one token per step
        assert_eq!(96 / patch_count(96, 8, 8).unwrap(), 8);
    }

    #[test]
    fn overlapping_patches() {
        let p = partition_patches(&series(1, 2, 12), 4, 2).unwrap();
        assert_eq!(p.shape(), &[1, 2, 5, 4]);
        assert_eq!(p.at(&[0, 1, 1, 0]), 14.0);
        assert_eq!(p.at(&[0, 1, 2, 0]), 16.0);
        assert_eq!(p.at(&[0, 0, 0, 3]), p.at(&[0, 0, 1, 1]));
    }

    #[test]
    fn embedding_cases() {
        let mut tape = Tape::<f64>::new();
        let patches = tape.constant(partition_patches(&series(1, 2, 12), 4, 4).unwrap());
        let w = tape.constant(Tensor::zeros(&[4, 8]));
        let b = tape.constant(Tensor::from_fn(&[8], |i| i as f64));
        let pos = tape.constant(Tensor::zeros(&[3, 8]));
        let out = embed_patches(&mut tape, patches, w, b, pos).unwrap();
        assert_eq!(tape.shape(out), &[1, 2, 3, 8]);
        for tok in tape.value(out).data().chunks(8) {
            assert_eq!(tok, tape.value(b).data());
        }

        let eye = tape.constant(Tensor::from_fn(&[4, 4], |k| if k / 4 == k % 4 { 1.0 } else { 0.0 }));
        let zb = tape.constant(Tensor::zeros(&[4]));
        let zp = tape.constant(Tensor::zeros(&[3, 4]));
        let same = embed_patches(&mut tape, patches, eye, zb, zp).unwrap();
        assert_eq!(tape.value(same), tape.value(patches));
    }

    #[test]
    fn augmentation_broadcasts_node_embedding() {
        let mut tape = Tape::<f64>::new();
        let feats = tape.constant(Tensor::from_fn(&[2, 3, 4, 5], |k| k as f64));
        let e = tape.constant(Tensor::from_fn(&[3, 5], |k| -(k as f64)));
        let aug = augment_features(&mut tape, feats, e).unwrap();
        let v = tape.value(aug);
        assert_eq!(v.shape(), &[2, 3, 4, 10]);
        for b in 0..2 {
            for node in 0..3 {
                for p in 0..4 {
                    for c in 0..5 {
                        assert_eq!(v.at(&[b, node, p, 5 + c]), -((node * 5 + c) as f64));
                    }
                }
            }
        }
        let z = tape.constant(Tensor::zeros(&[3, 5]));
        let aug = augment_features(&mut tape, feats, z).unwrap();
        let v = tape.value(aug);
        assert!(v.data().chunks(5).skip(1).step_by(2).all(|c| c.iter().all(|&x| x == 0.0)));
    }
}
