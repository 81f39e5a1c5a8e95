//! Cascaded network: hyper-connections, mixture-of-linears MLPs, the
//! projection head and the end-to-end forward pass.

mod head;
mod hyper;
mod model;
mod mol;

pub use head::projection_head;
pub use hyper::{hyper_apply, init_streams, merge_streams, HyperParams};
pub use model::{Cascade, FlowNet, ForwardOptions, ForwardTrace, Init, Inspection, LayerTrace, ParamSpec};
pub use mol::{mmlp_forward, mol_gate, mol_linear, MolParams};
