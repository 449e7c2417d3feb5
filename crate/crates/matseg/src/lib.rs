//! Files, thread pools and the end-to-end pipeline around [`matseg_core`].
//!
//! On-disk formats are small JSON headers next to raw little-endian grids,
//! see [`io`]. [`pipeline`] wires calibration, encoding, training, fusion,
//! voting and evaluation into one deterministic run.

pub mod error;
pub mod exec;
pub mod io;
pub mod pipeline;
pub mod scene;

pub use error::{Error, Result};
pub use matseg_core as core;
