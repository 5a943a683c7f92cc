//! Audio-visual direction-of-arrival estimation for multiple speakers.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! - [`geom`]: pinhole projection, noisy face-box synthesis and azimuth ground truth
//! - [`audio`]: far-field array rendering, additive noise, framing, GCC-PHAT and SRP-PHAT
//! - [`visual`]: Gaussian face-position features, detection swapping and detection rate
//! - [`nn`]: from-scratch MLP layers, Adam, and the concatenation / adaptive-weighting models
//! - [`eval`]: peak decoding, circular error metrics and the SNR x swap robustness grid
//! - [`dataset`] and [`pipeline`]: synthetic scenes, feature stores and the command drivers
//!
//! Per-frame work is data-parallel through [`exec`]; with the `parallel` feature
//! disabled every map runs as a plain sequential loop and produces identical output.

pub mod audio;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod exec;
pub mod geom;
pub mod io;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod visual;

pub use error::{Error, Result};
pub use exec::Execution;
