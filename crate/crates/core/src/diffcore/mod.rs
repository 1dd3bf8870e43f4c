//! Reverse-mode differentiation over dense `f64` matrices and the neural
//! building blocks trained on top of it.

pub mod adam;
pub mod gradcheck;
pub mod kernels;
pub mod nn;
pub mod tape;
pub mod tensor;

pub use adam::AdamState;
pub use gradcheck::{blockwise_relative_error, grad_check, relative_error, GradCheckReport};
pub use nn::{gru_step, mlp_forward, Activation, BoundGru, BoundMlp, GruParams, Layer, MlpParams};
pub use tape::{BinaryOp, Gradients, Tape, UnaryOp, Var};
pub use tensor::Tensor;
