//! Minimal differentiable network used by the super-network and the
//! extracted sub-networks.

pub mod kernels;
mod network;

pub use network::{
    argmax, Backward, Gradients, NormMode, OpBlock, OpParams, ParamId, Selection, Sgd, Trace, Network,
};
