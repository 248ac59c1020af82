//! Kernelized spectral-correlation attention and an iterative-refinement
//! network for hyperspectral image super-resolution.

pub mod attention;
pub mod bench;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
