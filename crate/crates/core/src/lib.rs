pub mod error;
pub mod geometry;
pub mod harness;
pub mod interp;
pub mod metrics;
pub mod neural;
pub mod phantom;
pub mod recon;
pub mod restoration;
pub mod rng;
pub mod scalar;
pub mod sparsity;
pub mod stack;

pub use error::{Error, Result};

pub type Tensor32 = neural::Tensor<f32>;
pub type Tensor64 = neural::Tensor<f64>;
pub type Model32 = restoration::ResUNet<f32>;
