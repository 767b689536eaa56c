//! Inverse visual question answering: generate a question for which a given
//! answer holds about a given image.
//!
//! The crate contains the attention-based question generator and its
//! baselines ([`model`]), a teacher-forced trainer ([`training`]), the
//! linguistic and distractor-ranking evaluation suite ([`evaluation`]), and a
//! synthetic grid world with an exact answering oracle ([`microworld`]) that
//! stands in for real images at desk scale.
//!
//! Numerical code is generic over [`numerics::Scalar`]; `f32` is used for
//! training and `f64` for verification. The aliases below fix the common
//! instantiations.

pub mod evaluation;
pub mod microworld;
pub mod model;
pub mod numerics;
pub mod textdata;
pub mod training;

pub type Tensor32 = numerics::Tensor<f32>;
pub type Tensor64 = numerics::Tensor<f64>;
pub type Graph32 = numerics::Graph<f32>;
pub type Graph64 = numerics::Graph<f64>;
pub type Params32 = numerics::ParamRegistry<f32>;
pub type Params64 = numerics::ParamRegistry<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
