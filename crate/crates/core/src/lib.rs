//! Shared-expert / routed-expert co-training with mutual loss-gap
//! reweighting, plus the hierarchical-Gaussian domain-shift benchmark
//! used to study when each kind of expert wins.
//!
//! Numeric code is generic over [`numerics::Scalar`] (`f32` or `f64`);
//! the aliases below fix it to `f64`, which is what the command line uses.

pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod losses;
pub mod models;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};

pub type Matrix64 = numerics::Matrix<f64>;
pub type Mlp64 = numerics::Mlp<f64>;
pub type SharedModel64 = models::SharedModel<f64>;
pub type RoutedModel64 = models::RoutedModel<f64>;
pub type ModelPair64 = models::ModelPair<f64>;
pub type Checkpoint64 = models::Checkpoint<f64>;
pub type TrainOutcome64 = training::TrainOutcome<f64>;

pub type Matrix32 = numerics::Matrix<f32>;
pub type ModelPair32 = models::ModelPair<f32>;
