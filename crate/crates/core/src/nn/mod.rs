//! Small CPU numerics stack: tensors, a tape-based autodiff graph, layers,
//! Adam, checkpoints and gradient checking.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use layers::{Activation, Conv2d, Dense, Lstm, LstmState};
pub use optim::{AdamConfig, Grads, ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
