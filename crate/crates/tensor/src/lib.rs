//! Dense tensors with a tape-based reverse-mode autodiff engine.
//!
//! The engine covers what an attention policy over small sets needs:
//! matrix products, elementwise ops, masked softmax, layer normalization,
//! row means and 1D/2D convolutions. Graphs are generic over the element
//! type so the same computation can be replayed in `f64` for
//! finite-difference checks.

mod checkpoint;
mod conv;
mod error;
mod gradcheck;
mod graph;
mod host;
mod scalar;

pub use checkpoint::Checkpoint;
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, ScalarFunction};
pub use graph::{Graph, Tensor};
pub use host::HostTensor;
pub use scalar::Scalar;
