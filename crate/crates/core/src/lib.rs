//! Joint multi-relation extraction over full relation matrices.

pub mod analysis;
pub mod biror;
pub mod corpus;
pub mod encoder;
pub mod model;
pub mod multiror;
pub mod numerics;

pub use numerics::{DType, Scalar, Tensor};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
