//! Reverse-mode automatic differentiation over small dense tensors: exactly
//! the primitives needed by convolutional encoder-decoders and embedding
//! networks, plus Adam and a finite-difference gradient checker.

mod error;
pub mod gradcheck;
mod graph;
pub mod init;
mod kernels;
pub mod optim;
mod params;
mod scalar;
pub mod suite;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{check_gradients, GradCheckConfig, GradCheckReport, GraphBuilder};
pub use graph::{Graph, Padding, Var, NORM_EPS};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use params::{Bindings, ParamSet};
pub use scalar::Scalar;
pub use tensor::Tensor;
