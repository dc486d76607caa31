//! Desk-scale laboratory for studying patch backdoors in small neural
//! networks: planting them, enhancing them by gradient shaping, inverting
//! them with a mask/pattern optimizer, and measuring how robust or fragile
//! the planted trigger actually is.
//!
//! Everything in this crate is deterministic given a seed. Models compute in
//! `f32`; scalar aggregates (losses, means, AUCs) accumulate in `f64`.

pub mod data;
pub mod error;
pub mod inversion;
pub mod metrics;
pub mod nn;
pub mod poison;
pub mod rng;
pub mod robustness;
pub mod stats;
pub mod tensor;
pub mod theory;

pub use error::{Error, Result};
pub use tensor::Tensor;
