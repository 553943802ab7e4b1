//! Semi-supervised learning with self-adaptive confidence thresholds and
//! class-fairness regularization, on small synthetic problems.
//!
//! Layers, bottom up: [`ndcore`] (tensors, autodiff, MLP, SGD, weight EMA),
//! [`synthdata`] and [`augment`] (data), [`adaptive_threshold`] and
//! [`ssl_losses`] (the method), [`trainer`] (the training loop), and
//! [`theory`] (closed-form pseudo-label statistics on a Gaussian mixture).

pub mod adaptive_threshold;
pub mod augment;
mod error;
pub mod ndcore;
pub mod ssl_losses;
pub mod synthdata;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
