//! Spectral-mapping speech dereverberation.
//!
//! The crate is `no_std` (it needs `alloc`) and carries every numeric piece of the
//! toolkit: the STFT front end and spectral restoration back end, an image-source
//! room impulse response simulator, the highway deep denoising autoencoder and the
//! convolutional fusion network with their training loop, the ensemble
//! (per-condition specialists + fusion) pipeline and objective metrics.
//!
//! File formats, WAV IO and the command-line harness live in `dereverb-harness`.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod checkpoint;
pub mod dsp;
pub mod ensemble;
mod error;
pub mod fft;
pub mod math;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod rir;
pub mod synth;

pub use error::{Error, Result};
pub use matrix::Matrix;
