//! Dense tensors, reverse-mode differentiation, recurrent cells and the
//! Adam optimizer.

pub mod adam;
pub mod checkpoint;
pub mod graph;
pub mod gru;
pub mod init;
pub mod params;
pub mod rng;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use graph::{Graph, NodeId};
pub use gru::{gru_cell, gru_sequence, GruParams};
pub use init::{init_params, Init};
pub use params::{Grads, ParamId, ParamStore};
pub use rng::{SeededRng, Stream};
pub use tensor::Tensor;
