//! Allocation-only building blocks for class-conditioned garment try-off.
//!
//! This crate carries everything that can be expressed without IO or a
//! tensor runtime: the FlatShop synthetic rasterizer and preprocessing,
//! diffusion noise schedules, the Euler sampler with classifier-free
//! guidance, and the full-reference / distribution image metrics.
//!
//! The companion `garb` crate layers the trainable networks, checkpoints
//! and the command line on top.
#![no_std]

extern crate alloc;

pub mod color;
pub mod error;
pub mod flatshop;
pub mod image;
pub mod metrics;
pub mod sampler;
pub mod schedule;

pub use error::{Error, Result};
pub use image::{Plane, RgbImage};
