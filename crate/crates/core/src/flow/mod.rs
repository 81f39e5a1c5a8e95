//! Patch tokens, adaptive spatial masks, flow estimation and the
//! conservation-constrained flow update.

mod allocation;
mod asm;
mod config;
mod fem;
mod patch;

pub use allocation::{allocation_matrix, flow_combine, flow_logits, head_support, od_vectors, OdParams};
pub use asm::{adaptive_mask, compute_mask, compute_radius, support_from_mask, MaskBundle};
pub use config::{AblationFlags, FlowMode, ModelConfig};
pub use fem::{causal_support, fem_forward, FemParams};
pub use patch::{augment_features, embed_patches, partition_patches, patch_count};

use crate::diff::{Tape, Var};
use crate::error::Result;
use crate::scalar::Scalar;

/// `[B, N, P, d] → [B, h, N, P, d / h]`.
pub fn fold_heads<T: Scalar>(tape: &mut Tape<T>, x: Var, heads: usize) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let x = tape.reshape(x, &[s[0], s[1], s[2], heads, s[3] / heads])?;
    tape.permute(x, &[0, 3, 1, 2, 4])
}

/// `[B, h, N, P, d'] → [B, N, P, h·d']`.
pub fn unfold_heads<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let x = tape.permute(x, &[0, 2, 3, 1, 4])?;
    tape.reshape(x, &[s[0], s[2], s[3], s[1] * s[4]])
}
