//! Conditional image-to-image diffusion at desk scale.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. Everything here is pure computation: noise schedules, the Gaussian
//! diffusion math and iterative sampler, a small U-Net denoiser with its own
//! reverse-mode autodiff, task corruption operators, evaluation metrics, and
//! the training step. File formats, image decoding and the command line live in
//! the companion `palette` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod denoiser;
pub mod diffusion;
pub mod diversity;
mod error;
pub mod metrics;
pub mod optim;
pub mod panorama;
mod real;
pub mod rng;
pub mod schedule;
pub mod tasks;
mod tensor;
pub mod toy;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;
pub use rng::RandomSource;
pub use schedule::NoiseSchedule;
pub use tensor::{ImageTensor, Shape4};
