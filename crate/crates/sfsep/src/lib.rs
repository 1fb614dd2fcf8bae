//! Unsupervised single-channel source separation by fitting differentiable
//! source-filter models to the mixture.

pub mod audio;
pub mod config;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod f0;
pub mod fft;
pub mod fit;
pub mod loss;
pub mod lsf;
pub mod nmf;
pub mod synth;
pub mod wiener;

pub use error::{Error, Result};
