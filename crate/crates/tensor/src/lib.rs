//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! Build a [`Graph`] per forward pass, bind trainable tensors from a
//! [`ParamStore`], call [`Graph::backward`] on a scalar loss and feed the
//! parameter gradients to [`Adam`].

mod checkpoint;
mod error;
pub mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{read_checkpoint, to_bytes, write_checkpoint};
pub use error::{Result, TensorError};
pub use graph::{log_sum_exp, softmax_in_place, Graph, Var};
pub use optim::{adam_step, Adam};
pub use params::{standard_normal, ParamId, ParamStore};
pub use tensor::{argmax, Tensor};
