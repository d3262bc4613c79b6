//! Dense and sparse matrices plus the differentiation tape that every
//! trainable computation in the crate runs through.

mod activation;
mod csr;
pub mod gradcheck;
mod matrix;
mod tape;

pub use activation::ActivationKind;
pub use csr::CsrMatrix;
pub use matrix::Matrix;
pub use tape::{log_softmax_rows, Gradients, Tape, Var};
