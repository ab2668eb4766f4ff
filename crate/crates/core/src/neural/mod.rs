//! Dense f64 tensors, a tape-based reverse-mode engine, the layers used by
//! the imitators and the Q-network, and Adam.

pub mod gradcheck;
mod graph;
mod layers;
mod params;
mod tensor;

pub use graph::{Backward, Graph, NodeId};
pub use layers::{Dense, Mlp, MultiHeadAttention};
pub use params::{AdamConfig, Grads, ParamId, ParamStore};
pub use tensor::Tensor2;

#[cfg(test)]
mod tests;
