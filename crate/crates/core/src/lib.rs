//! Multi-view material segmentation for registered multispectral satellite stacks.
//!
//! The crate is `no_std` (it needs `alloc`) and carries every algorithmic piece
//! of the pipeline: top-of-atmosphere calibration, BRDF dictionaries and their
//! sampling, per-pixel encodings (single-angle, multi-angle and reflectance
//! residual), a small trainable pixel classifier, softmax fusion with segment
//! voting, segmentation metrics and a seeded synthetic scene renderer.
//!
//! File formats, thread pools and the command-line front end live in the
//! `matseg` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod brdf;
pub mod calibration;
pub mod classifier;
pub mod encoder;
mod error;
pub mod exec;
pub mod fusion;
pub mod imagery;
pub mod metrics;
pub mod synth;

pub use error::{Error, Result};
