//! Single-image blind-spot denoising with adaptive masking and local pixel
//! shuffling.
//!
//! The crate is organised bottom-up:
//!
//! * [`image`] and [`metrics`]: rasters in the [0, 255] domain, file I/O, PSNR/SSIM.
//! * [`noise`]: spatially correlated Gaussian noise and its empirical checks.
//! * [`net`]: the convolutional denoiser with exact gradients and Adam.
//! * [`bsd`]: masks, masked training, noise-level estimation, ratio selection
//!   and ensemble inference.
//! * [`shuffle`]: flatness detection and within-tile pixel permutation.
//! * [`pipeline`]: the full adaptive run, the fixed-ratio baseline and the
//!   experiment harness.

pub mod bsd;
pub mod error;
pub mod image;
pub mod metrics;
pub mod net;
pub mod noise;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod shuffle;

pub use error::{Error, Result};
pub use image::Image;
