//! UV-space face texture completion and attribute generation.

pub mod adagan;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod gradsuite;
pub mod image;
pub mod nn;
pub mod synth;
pub mod tcgan;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Adam, AdamConfig, Gradients, Graph, Tensor, Var};
