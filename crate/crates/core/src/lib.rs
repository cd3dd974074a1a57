//! Compressive spectral imaging with a coded aperture learned jointly with a
//! 3D convolutional classifier.
//!
//! The pipeline runs from a hyperspectral [`datacube`], through the
//! [`coded_aperture`] patterns and the dual-disperser [`forward_model`],
//! into the [`net3d`] classifier. [`ccnn`] trains aperture and network end to
//! end, and [`evalbench`] compares against fixed-aperture baselines.

pub mod ccnn;
pub mod cli;
pub mod coded_aperture;
pub mod datacube;
pub mod error;
pub mod evalbench;
pub mod forward_model;
pub mod net3d;
pub mod seed;

pub use error::{Error, Result};
