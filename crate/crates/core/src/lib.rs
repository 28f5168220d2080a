//! Trajectory prediction with a frozen transformer backbone.
//!
//! Scene histories are encoded per timestep, reprogrammed into the
//! backbone's embedding space, optionally fused with a rasterized local map,
//! and decoded from the backbone's hidden states into future positions. Only
//! the modules around the backbone carry trainable parameters.

pub mod adapter;
pub mod autodiff;
pub mod backbone;
mod error;
pub mod fusion;
pub mod map_encoder;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod scene_encoder;
pub mod scenes;

pub use error::{Error, Result};
