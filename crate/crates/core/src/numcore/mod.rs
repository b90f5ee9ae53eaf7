//! Dense reverse-mode autodiff, layer primitives, Adam, gradient checking and
//! checkpoint I/O.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use gradcheck::{gradcheck, GradcheckOptions, GradcheckReport};
pub use graph::{Activation, BackwardFault, Graph, Var};
pub use layers::{bilstm_encode, dropout, lstm_step, mean_pool, Dense, FeedForward, LstmParams};
pub use tensor::{Gradients, ParamId, ParamStore, Tensor};
