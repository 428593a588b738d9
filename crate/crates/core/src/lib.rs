pub mod augment;
pub mod cli;
pub mod cluster;
pub mod data;
mod error;
pub mod eval;
pub mod loss;
pub mod model;
pub mod pipeline;
pub mod seed;

pub use error::{Error, Result};
