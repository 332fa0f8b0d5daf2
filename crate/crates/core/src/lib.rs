//! Allocation-only core of the diffroad toolchain: road-scenario geometry,
//! conditional denoising diffusion (schedule, 1D UNet denoiser, training and
//! ancestral sampling), slope synthesis, scenario scoring, realism metrics
//! and the OpenDRIVE document model.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod error;
pub mod geo;
pub mod geometry;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod real;
pub mod rng;
pub mod sampling;
pub mod scene_eval;
pub mod schedule;
pub mod synth;
pub mod tensor;
pub mod terrain;
pub mod train;
pub mod xodr;

pub use error::{Error, OpenDriveError, Result};
pub use real::Real;
pub use tensor::Tensor;
