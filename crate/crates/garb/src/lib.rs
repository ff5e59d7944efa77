//! Networks, training, checkpoints and tooling for class-conditioned garment
//! try-off on top of `garb-core`.

pub mod checkpoint;
pub mod classifier;
pub mod cli;
pub mod codec;
pub mod conditioning;
pub mod config;
pub mod dataset;
pub mod denoiser;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod optim;
pub mod p2p;
pub mod pipeline;
pub mod train;
pub mod workflow;

pub use error::{Error, Result};
