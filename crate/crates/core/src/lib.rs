//! Conditional-attention agents for decentralized multi-agent
//! reinforcement learning.
//!
//! The numeric core ([`autodiff`], [`transformer`], [`model`]) is generic
//! over the scalar type: training uses `f32`, gradient checks `f64`. The
//! aliases at the crate root name the common instantiations.

pub mod autodiff;
pub mod checkpoint;
pub mod env;
pub mod error;
pub mod interp;
pub mod model;
pub mod params;
pub mod scalar;
pub mod tensor;
pub mod training;
pub mod transformer;

#[cfg(any(test, feature = "oracles"))]
pub mod oracles;
#[cfg(any(test, feature = "oracles"))]
pub mod testkit;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type ParamStore32 = params::ParamStore<f32>;
pub type PolicyInput32 = model::PolicyInput<f32>;
