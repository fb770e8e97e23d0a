//! Dense fp64 tensors with a reverse-mode tape, the layer set used by the
//! loop models, AdamW, cosine annealing and the `LCKP` checkpoint format.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod optim;
pub mod param;
pub mod rng;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use gradcheck::grad_check;
pub use graph::{Gradients, Graph, Var};
pub use optim::{AdamW, CosineSchedule};
pub use param::{Param, ParamId, ParamStore};
pub use rng::Rng;
pub use tensor::Tensor;
