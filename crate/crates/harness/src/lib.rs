//! Training, evaluation, ablation, checkpointing and plotting around
//! [`maptraj_core`], plus the implementation of the `maptraj` CLI.

pub mod ablation;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod loss;
pub mod plot;
pub mod train;

pub use error::{HarnessError, Result};
