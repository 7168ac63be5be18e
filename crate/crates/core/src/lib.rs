#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod graph;
pub mod image;
pub mod label;
pub mod layers;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod params;
pub mod plan;
pub mod schedule;
pub mod seed;
pub mod stats;
pub mod tensor;
pub mod text;
pub mod train;

pub use error::{Error, Result};
pub use label::Label;
pub use tensor::Tensor;
