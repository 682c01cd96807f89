//! Small tensor library: a reverse-mode tape over the ops the agents need,
//! layer helpers, Adam and a binary checkpoint format.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

use thiserror::Error;

pub use graph::{Backward, Graph, Var};
pub use layers::{gumbel_softmax, sample_gumbel, BatchNorm2d, Conv2d, Embedding, Linear, LstmCell};
pub use optim::{adam_step, clip_global_norm, AdamConfig};
pub use params::{BufferId, Grads, NetworkParams, ParamId};
pub use tensor::{Scalar, Tensor};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {shapes:?}")]
    Shape { op: String, shapes: Vec<Vec<usize>> },
    #[error("parameter layout: {0}")]
    Layout(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
