//! Neural bin packing: geometry, instance generation, the attention policy,
//! its training loop and the evaluation harness.

pub mod error;
pub mod datagen;
pub mod geometry;
pub mod harness;
pub mod heuristics;
pub mod model;
pub mod oracle;
pub mod train;

pub use error::{Error, Result};
