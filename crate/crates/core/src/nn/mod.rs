//! Reverse-mode differentiation and the two-branch reconstruction network.

pub mod adam;
pub mod graph;
pub mod net;

pub use adam::{adam_step, AdamState};
pub use graph::{ConvSpec, Graph, NodeId, Op};
pub use net::{
    build, example_loss_grad, forward, group_dims, group_names, parameter_count, reconstruct, zero_fill_backproject,
    NetConfig, NetworkParams, ParamGroup, Placement, Source, TapMode, BRANCH_LAYERS, FEATURES,
};
