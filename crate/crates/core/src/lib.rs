//! Future-frame prediction GAN for video anomaly detection.
//!
//! Everything numeric is generic over [`Scalar`]; the aliases below fix the
//! common precisions.

pub mod data_io;
pub mod evalkit;
pub mod losses;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod scoring;
pub mod synth;
pub mod trainer;

mod error;
mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Frame32 = pipeline::Frame<f32>;
pub type Frame64 = pipeline::Frame<f64>;
pub type Generator32 = model::Generator<f32>;
pub type Generator64 = model::Generator<f64>;
pub type Discriminator32 = model::Discriminator<f32>;
pub type Discriminator64 = model::Discriminator<f64>;
pub type Trainer32 = trainer::Trainer<f32>;
pub type Trainer64 = trainer::Trainer<f64>;
pub type Checkpoint32 = trainer::Checkpoint<f32>;
pub type Checkpoint64 = trainer::Checkpoint<f64>;
