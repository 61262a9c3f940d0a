//! Small deterministic layer kernels with hand-written gradients.
//!
//! Everything is double precision. Each layer exposes a forward pass and a
//! backward pass that accumulates parameter gradients into a second instance
//! of the same layer, so a zeroed copy of a model doubles as its gradient.

mod adam;
mod conv;
pub mod gradcheck;
mod gru;
mod linear;
mod loss;
mod tensor;

pub use adam::{Adam, BETA1, BETA2, EPSILON};
pub use conv::{maxpool2d, maxpool2d_backward, relu_backward_inplace, relu_inplace, Conv2d};
pub use gradcheck::grad_check;
pub use gru::{Gru, GruTrace};
pub use linear::Linear;
pub use loss::{log_softmax, log_softmax_nll};
pub use tensor::{axpy, dot, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value at {0}")]
    NonFinite(String),
    #[error("target class {target} out of range for {classes} classes")]
    BadTarget { target: usize, classes: usize },
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;
