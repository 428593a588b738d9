//! A minimal reverse-mode automatic differentiation core.
//!
//! Provides exactly what a small convolutional autoencoder needs:
//!
//! - [`Tensor`]: dense row-major arrays over `f32` or `f64`
//! - [`Tape`]: a single-use graph recording conv2d, transposed conv2d,
//!   linear, GELU, sigmoid, average pooling and a few reductions, plus
//!   [`Tape::custom`] for ops with hand-written gradients
//! - [`ParamStore`]: named parameters and their gradients
//! - [`Lars`] and [`Adam`] optimizers, [`ScheduleConfig`] learning-rate schedule
//! - [`checkpoint`]: a JSON-manifest + raw payload file format
//!
//! Kernels are single-threaded and deterministic: identical inputs always
//! give bit-identical outputs and gradients.

pub mod checkpoint;
mod error;
pub mod gradcheck;
mod graph;
pub mod kernels;
pub mod optim;
mod param;
mod scalar;
pub mod schedule;
mod tensor;

pub use checkpoint::{Checkpoint, CheckpointWriter, Manifest, TensorEntry};
pub use error::{NnError, Result};
pub use graph::{BackwardFn, Gradients, Tape, Var};
pub use kernels::ConvGeometry;
pub use optim::{Adam, AdamConfig, Lars, LarsConfig, OptimizerState};
pub use param::{uniform_fan_in, ParamId, ParamStore, Parameter};
pub use scalar::Real;
pub use schedule::ScheduleConfig;
pub use tensor::Tensor;
